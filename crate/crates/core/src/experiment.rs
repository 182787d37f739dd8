//! End-to-end pipelines behind the command-line tool. Every file written
//! here starts with `# config_hash=...` comment lines; wall-clock times
//! only go to `run.log`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{load_checkpoint, Checkpoint};
use crate::config::ExperimentConfig;
use crate::csvfmt::fmt12;
use crate::ecm::LambdaVec;
use crate::error::{Error, Result};
use crate::eval::{
    estimate_states, export_report, ident_report, state_errors, write_text, IdentReport, StateErrorReport,
};
use crate::losses::{integration_loss, standard_pinn_loss, LossConfig, NetworkEstimator, WindowRef};
use crate::network::{init_weights, NetworkParams};
use crate::profile::{synth_dynamic_profile, SynthSpec};
use crate::rng::PortableRng;
use crate::simulate::{add_gaussian_noise, export_trace_csv_with, load_trace_csv, simulate, SimTrace};
use crate::train::{build_windows, export_history_csv, CheckpointSink, HistoryRow, LossKind, TrainState, Trainer};

/// Training traces (outputs only) and the validation trace (with true
/// states).
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub train: Vec<SimTrace>,
    pub validation: SimTrace,
}

/// Synthesizes one trace (with hidden states) from the config's cell and
/// data settings.
pub fn synth_trace(cfg: &ExperimentConfig, seed: u64, label: &str) -> Result<SimTrace> {
    let d = &cfg.data;
    let spec = SynthSpec {
        net_soc_drop: d.net_soc_drop,
        ..SynthSpec::new(
            seed,
            d.duration_s,
            d.dt,
            d.max_c_rate,
            cfg.cell.capacity_ah,
            d.mean_segment_s,
        )
    };
    let mut profile = synth_dynamic_profile(&spec)?;
    profile.label = label.to_string();
    let mut trace = simulate(&cfg.true_params()?, &cfg.ocv()?, &profile, cfg.initial_state())?;
    trace.meta.seed = Some(seed);
    Ok(trace)
}

/// Builds (or loads) the traces an experiment runs on.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<ExperimentData> {
    let d = &cfg.data;
    let mut train = Vec::new();
    if d.train_files.is_empty() {
        for (i, &seed) in d.train_seeds.iter().enumerate() {
            let t = synth_trace(cfg, seed, &format!("train_{}", i + 1))?;
            let t = if d.noise_sigma_v > 0.0 {
                add_gaussian_noise(&t, d.noise_sigma_v, d.noise_seed.wrapping_add(i as u64))?
            } else {
                t
            };
            train.push(t.measurable_only());
        }
    } else {
        for p in &d.train_files {
            train.push(load_trace_csv(&cfg.resolve(p))?.measurable_only());
        }
    }
    let validation = match &d.validation_file {
        Some(p) => {
            let path = cfg.resolve(p);
            let t = load_trace_csv(&path)?;
            if t.hidden.is_none() {
                return Err(Error::MissingColumn {
                    source_name: path.display().to_string(),
                    column: "soc".into(),
                });
            }
            t
        }
        None => synth_trace(cfg, d.validation_seed, "validation")?,
    };
    Ok(ExperimentData { train, validation })
}

fn preamble(cfg: &ExperimentConfig) -> Vec<String> {
    vec![format!("config_hash={}", cfg.hash())]
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Appends a timestamped line to `run.log` in `out`.
pub fn log_event(out: &Path, cfg: &ExperimentConfig, event: &str) -> Result<()> {
    use std::io::Write;
    ensure_dir(out)?;
    let path = out.join("run.log");
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "unix_time={secs} config_hash={} {event}", cfg.hash()).map_err(|e| Error::io(&path, e))
}

/// Writes `train_<k>.csv` (outputs only) and `validation.csv` (with true
/// states) to `out`.
pub fn cmd_simulate(cfg: &ExperimentConfig, out: &Path) -> Result<Vec<PathBuf>> {
    ensure_dir(out)?;
    let data = prepare_data(cfg)?;
    let pre = preamble(cfg);
    let mut written = Vec::new();
    for (i, t) in data.train.iter().enumerate() {
        let p = out.join(format!("train_{}.csv", i + 1));
        export_trace_csv_with(t, &p, false, &pre)?;
        written.push(p);
    }
    let p = out.join("validation.csv");
    export_trace_csv_with(&data.validation, &p, true, &pre)?;
    written.push(p);
    Ok(written)
}

/// What a training run leaves behind.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub state: TrainState,
    pub ident: IdentReport,
    pub checkpoint: PathBuf,
}

/// Trains with the config's loss (or `kind` when given) for `epochs`
/// epochs, writing `checkpoint.json`, `history.csv` and `ident_report.csv`
/// into `out`. With `resume`, continues from that checkpoint.
pub fn run_training(
    cfg: &ExperimentConfig,
    data: &ExperimentData,
    kind: LossKind,
    epochs: usize,
    out: &Path,
    resume: Option<&Path>,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainSummary> {
    ensure_dir(out)?;
    let truth = cfg.true_params()?;
    let lambda_init = truth.scaled(cfg.identification.init_factor).lambda()?;
    let state = match resume {
        Some(p) => {
            let ck = load_checkpoint(p)?;
            if ck.trajectory_hash != cfg.trajectory_hash() {
                return Err(Error::Config(format!(
                    "checkpoint {} was written under different settings",
                    p.display()
                )));
            }
            if ck.state.epoch > epochs {
                return Err(Error::Config(format!(
                    "checkpoint is at epoch {}, beyond the requested {epochs}",
                    ck.state.epoch
                )));
            }
            ck.state
        }
        None => TrainState::new(init_weights(cfg.shape(), cfg.network.init_seed), lambda_init),
    };
    let dataset = build_windows(data.train.clone(), cfg.network.history, cfg.loss.rollout)?;
    let mut tcfg = cfg.train_config();
    tcfg.loss = kind;
    tcfg.epochs = epochs;
    let mut trainer = Trainer::new(
        &dataset,
        cfg.system()?,
        cfg.loss.weights(),
        tcfg,
        cfg.network.norm,
        &cfg.bounds()?,
        state,
    )?;
    let sink = CheckpointSink {
        path: out.join("checkpoint.json"),
        config_hash: cfg.hash(),
        trajectory_hash: cfg.trajectory_hash(),
    };
    let result = trainer.run(Some(&sink), |r| progress(r));
    // history up to the failure is still worth having
    export_history_csv(&trainer.state, &out.join("history.csv"), &preamble(cfg))?;
    result?;
    let state = trainer.state;
    let ident = ident_report(&state.lambda(), &truth)?;
    export_report(&ident, None, out, &preamble(cfg))?;
    Ok(TrainSummary {
        state,
        ident,
        checkpoint: sink.path,
    })
}

pub fn cmd_train(
    cfg: &ExperimentConfig,
    out: &Path,
    resume: Option<&Path>,
    progress: &mut dyn FnMut(&HistoryRow),
) -> Result<TrainSummary> {
    let data = prepare_data(cfg)?;
    run_training(cfg, &data, cfg.loss_kind(), cfg.training.epochs, out, resume, progress)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub ident: IdentReport,
    pub errors: StateErrorReport,
}

/// Validation inference with a trained network and identified lambda.
pub fn evaluate(
    cfg: &ExperimentConfig,
    params: &NetworkParams,
    lambda: &LambdaVec,
    validation: &SimTrace,
    out: &Path,
    extra_preamble: &[String],
) -> Result<EvalSummary> {
    let est = NetworkEstimator {
        params,
        history: cfg.network.history,
        norm: cfg.network.norm,
        slot: None,
    };
    let states = estimate_states(&est, lambda, &cfg.ocv()?, validation)?;
    let errors = state_errors(&states, validation)?;
    let ident = ident_report(lambda, &cfg.true_params()?)?;
    let mut pre = preamble(cfg);
    pre.extend_from_slice(extra_preamble);
    export_report(&ident, Some((&errors, &states, validation)), out, &pre)?;
    Ok(EvalSummary { ident, errors })
}

/// Writes `ident_report.csv`, `state_errors.csv` and
/// `validation_trace.csv` for the checkpoint at `checkpoint`.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: &Path, out: &Path) -> Result<EvalSummary> {
    let ck: Checkpoint = load_checkpoint(checkpoint)?;
    if ck.state.params.shape != cfg.shape() {
        return Err(Error::Config("checkpoint network shape differs from the config".into()));
    }
    let data = prepare_data(cfg)?;
    let extra = [format!("checkpoint_config_hash={}", ck.config_hash)];
    evaluate(cfg, &ck.state.params, &ck.state.lambda(), &data.validation, out, &extra)
}

#[derive(Debug, Clone)]
pub struct CompareArm {
    pub kind: LossKind,
    pub train: TrainSummary,
    pub eval: EvalSummary,
}

/// Trains both losses from the same initial point with the same budget
/// and writes per-arm reports under `out/<loss>/` plus side-by-side tables
/// `compare_ident.csv` and `compare_state_errors.csv`.
pub fn cmd_compare(
    cfg: &ExperimentConfig,
    out: &Path,
    progress: &mut dyn FnMut(LossKind, &HistoryRow),
) -> Result<Vec<CompareArm>> {
    ensure_dir(out)?;
    let data = prepare_data(cfg)?;
    let mut arms = Vec::new();
    for kind in [LossKind::Integration, LossKind::StandardPinn] {
        let dir = out.join(kind.name());
        let train = run_training(cfg, &data, kind, cfg.compare.epochs, &dir, None, &mut |r| {
            progress(kind, r)
        })?;
        let eval = evaluate(
            cfg,
            &train.state.params,
            &train.state.lambda(),
            &data.validation,
            &dir,
            &[],
        )?;
        arms.push(CompareArm { kind, train, eval });
    }
    let pre = preamble(cfg);
    let mut ident = comment_block(&pre);
    ident.push_str("parameter,true");
    for a in &arms {
        let _ = write!(ident, ",{0},{0}_rel_error_pct", a.kind.name());
    }
    ident.push('\n');
    for (i, row) in arms[0].eval.ident.rows.iter().enumerate() {
        let _ = write!(ident, "{},{}", row.name, fmt12(row.true_value));
        for a in &arms {
            let r = &a.eval.ident.rows[i];
            let _ = write!(ident, ",{},{}", fmt12(r.identified), fmt12(r.rel_error_pct));
        }
        ident.push('\n');
    }
    write_text(&out.join("compare_ident.csv"), &ident)?;

    let mut errs = comment_block(&pre);
    errs.push_str("quantity,unit");
    for a in &arms {
        let _ = write!(errs, ",{0}_mae,{0}_rmse", a.kind.name());
    }
    errs.push('\n');
    type Pick = fn(&StateErrorReport) -> crate::eval::ErrorStats;
    let picks: [(&str, &str, Pick); 3] = [
        ("soc", "pp", |e| e.soc_pp),
        ("vc", "mV", |e| e.vc_mv),
        ("v", "mV", |e| e.v_mv),
    ];
    for (q, unit, pick) in picks {
        let _ = write!(errs, "{q},{unit}");
        for a in &arms {
            let s = pick(&a.eval.errors);
            let _ = write!(errs, ",{},{}", fmt12(s.mae), fmt12(s.rmse));
        }
        errs.push('\n');
    }
    write_text(&out.join("compare_state_errors.csv"), &errs)?;
    Ok(arms)
}

fn comment_block(lines: &[String]) -> String {
    lines.iter().map(|l| format!("# {l}\n")).collect()
}

/// One checked gradient entry.
#[derive(Debug, Clone, PartialEq)]
pub struct GradEntry {
    /// `theta[i]` or `l1`, `l2`, `l3`.
    pub name: String,
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-3)`: at most
    /// `1e-6` exactly when the error is within `max(1e-6 relative, 1e-9
    /// absolute)`.
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub loss: LossKind,
    pub entries: Vec<GradEntry>,
}

impl GradcheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.entries.iter().map(|e| e.rel_error).fold(0.0, f64::max)
    }

    pub fn passed(&self, tol: f64) -> bool {
        self.max_rel_error() <= tol
    }
}

pub const GRADCHECK_TOLERANCE: f64 = 1e-6;

/// Central-difference check of the reverse-mode gradient on a small
/// instance: a few windows of the first training trace, the initial
/// network, and lambda at its initial value.
pub fn gradcheck(cfg: &ExperimentConfig, kind: LossKind) -> Result<GradcheckReport> {
    let g = &cfg.gradcheck;
    let data = prepare_data(cfg)?;
    let traces = vec![data.train[0].clone()];
    let len = traces[0].len();
    let (ell, n) = (g.history, g.rollout);
    if len < ell + n + 2 {
        return Err(Error::TraceTooShort {
            label: traces[0].label().to_string(),
            len,
            needed: ell + n + 2,
        });
    }
    let mut rng = PortableRng::new(g.seed);
    let batch: Vec<WindowRef> = (0..g.windows)
        .map(|_| WindowRef::new(0, ell + rng.index(len - n - ell)))
        .collect();
    let params = init_weights(cfg.shape(), cfg.network.init_seed);
    let np = params.len();
    let mut idx: Vec<usize> = (0..np).collect();
    rng.shuffle(&mut idx);
    let mut chosen: Vec<usize> = idx.into_iter().take(g.sampled_weights.min(np)).collect();
    chosen.sort_unstable();
    chosen.extend(np..np + 3);

    let lambda0 = cfg.true_params()?.scaled(cfg.identification.init_factor).lambda()?;
    let mut point = params.data.clone();
    point.extend(lambda0.as_array());
    let system = cfg.system()?;
    let loss_cfg = LossConfig {
        rollout: n,
        ..cfg.loss.weights()
    };
    let shape = params.shape;
    let eval = |point: &[f64], grad: bool| -> Result<(f64, Option<Vec<f64>>)> {
        let p = NetworkParams::from_flat(shape, point[..np].to_vec())?;
        let est = NetworkEstimator {
            params: &p,
            history: ell,
            norm: cfg.network.norm,
            slot: Some(0),
        };
        let mut tape = Tape::new(np + 3);
        let lam: Vec<Var> = (0..3).map(|i| tape.param(&[point[np + i]], 1, 1, np + i)).collect();
        let l = match kind {
            LossKind::Integration => integration_loss(&mut tape, &est, &system, &traces, &batch, &lam, &loss_cfg)?,
            LossKind::StandardPinn => standard_pinn_loss(&mut tape, &est, &system, &traces, &batch, &lam, &loss_cfg)?,
        };
        let v = tape.scalar(l.total);
        let gr = if grad { Some(tape.backward(l.total)?.0) } else { None };
        Ok((v, gr))
    };
    let (_, grad) = eval(&point, true)?;
    let grad = grad.expect("requested");
    let mut entries = Vec::with_capacity(chosen.len());
    for i in chosen {
        let mut p = point.clone();
        p[i] = point[i] + g.step;
        let (up, _) = eval(&p, false)?;
        p[i] = point[i] - g.step;
        let (down, _) = eval(&p, false)?;
        let numeric = (up - down) / (2.0 * g.step);
        let analytic = grad[i];
        let name = if i < np {
            format!("theta[{i}]")
        } else {
            format!("l{}", i - np + 1)
        };
        let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-3);
        entries.push(GradEntry {
            name,
            analytic,
            numeric,
            rel_error,
        });
    }
    Ok(GradcheckReport { loss: kind, entries })
}

pub fn cmd_gradcheck(cfg: &ExperimentConfig) -> Result<Vec<GradcheckReport>> {
    [LossKind::Integration, LossKind::StandardPinn]
        .into_iter()
        .map(|k| gradcheck(cfg, k))
        .collect()
}
