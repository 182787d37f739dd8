use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use intpinn::config::ExperimentConfig;
use intpinn::experiment::{self, GRADCHECK_TOLERANCE};
use intpinn::train::HistoryRow;
use intpinn::{Error, Result};

/// Physics-informed state estimation and parameter identification for a
/// battery equivalent-circuit model.
#[derive(Parser, Debug)]
#[command(name = "intpinn", version)]
struct Cli {
    /// Experiment config (TOML). The bundled default is used when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Seed for weight initialization and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Epoch budget (training epochs, or per-arm epochs for `compare`).
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Print a progress line every this many epochs (0 = quiet).
    #[arg(long, global = true, default_value_t = 100)]
    report_every: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate training and validation traces.
    Simulate,
    /// Train the estimator and identify the model parameters.
    Train {
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Run validation inference with a trained checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Train with the integration loss and with the multi-term baseline
    /// under the same budget and report both.
    Compare,
    /// Check reverse-mode gradients against central finite differences.
    Gradcheck,
    /// Print the bundled default config.
    DefaultConfig,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default_config(),
    };
    if let Some(s) = cli.seed {
        cfg.override_seed(s);
    }
    if let Some(e) = cli.epochs {
        cfg.training.epochs = e;
        cfg.compare.epochs = e;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn reporter(every: usize, label: &str) -> impl FnMut(&HistoryRow) + '_ {
    move |r: &HistoryRow| {
        if every > 0 && r.epoch.is_multiple_of(every) {
            eprintln!(
                "{label}epoch {:>6}  loss {:.4e}  R0 {:.5}  R1 {:.5}  C {:.2}",
                r.epoch, r.loss, r.r0, r.r1, r.c
            );
        }
    }
}

fn print_ident(report: &intpinn::eval::IdentReport) {
    println!("{:<4} {:>14} {:>14} {:>10}", "", "true", "identified", "error %");
    for r in &report.rows {
        println!(
            "{:<4} {:>14.6} {:>14.6} {:>10.3}",
            r.name, r.true_value, r.identified, r.rel_error_pct
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    if let Command::DefaultConfig = cli.command {
        print!("{}", intpinn::config::DEFAULT_CONFIG);
        return Ok(());
    }
    let cfg = load_config(cli)?;
    let out: &Path = &cfg.output_dir;
    let name = match cli.command {
        Command::Simulate => "simulate",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Compare => "compare",
        Command::Gradcheck => "gradcheck",
        Command::DefaultConfig => "default-config",
    };
    experiment::log_event(out, &cfg, &format!("start {name}"))?;
    match &cli.command {
        Command::Simulate => {
            for p in experiment::cmd_simulate(&cfg, out)? {
                println!("{}", p.display());
            }
        }
        Command::Train { resume } => {
            let s = experiment::cmd_train(&cfg, out, resume.as_deref(), &mut reporter(cli.report_every, ""))?;
            print_ident(&s.ident);
            println!("checkpoint: {}", s.checkpoint.display());
        }
        Command::Eval { checkpoint } => {
            let s = experiment::cmd_eval(&cfg, checkpoint, out)?;
            print_ident(&s.ident);
            let e = &s.errors;
            println!("samples: {}", e.samples);
            println!("SoC MAE: {:.4} pp", e.soc_pp.mae);
            println!("vc  MAE: {:.4} mV", e.vc_mv.mae);
            println!("V   MAE: {:.4} mV", e.v_mv.mae);
        }
        Command::Compare => {
            let mut integration = reporter(cli.report_every, "[integration] ");
            let mut baseline = reporter(cli.report_every, "[standard_pinn] ");
            let arms = experiment::cmd_compare(&cfg, out, &mut |k, r| match k {
                intpinn::train::LossKind::Integration => integration(r),
                intpinn::train::LossKind::StandardPinn => baseline(r),
            })?;
            for a in &arms {
                println!("{} ({} loss terms)", a.kind.name(), a.train.state.term_names.len());
                print_ident(&a.eval.ident);
                let e = &a.eval.errors;
                println!(
                    "SoC MAE {:.4} pp, vc MAE {:.4} mV, V MAE {:.4} mV",
                    e.soc_pp.mae, e.vc_mv.mae, e.v_mv.mae
                );
            }
        }
        Command::Gradcheck => {
            let reports = experiment::cmd_gradcheck(&cfg)?;
            let mut worst = 0.0f64;
            for r in &reports {
                println!(
                    "{}: {} entries, max relative error {:.3e}",
                    r.loss.name(),
                    r.entries.len(),
                    r.max_rel_error()
                );
                worst = worst.max(r.max_rel_error());
            }
            println!("max relative error {worst:.3e}");
            if worst > GRADCHECK_TOLERANCE {
                return Err(Error::GradientMismatch {
                    max: worst,
                    tol: GRADCHECK_TOLERANCE,
                });
            }
        }
        Command::DefaultConfig => unreachable!(),
    }
    experiment::log_event(out, &cfg, &format!("done {name}"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error ({:?}): {e}", e.category());
            ExitCode::from(e.category().exit_code())
        }
    }
}
