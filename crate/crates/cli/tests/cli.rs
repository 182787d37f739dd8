use std::path::Path;
use std::process::{Command, Output};

fn intpinn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_intpinn"))
        .args(args)
        .output()
        .expect("spawn intpinn")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn default_config_round_trips_through_config_flag() {
    let out = intpinn(&["default-config"]);
    assert!(out.status.success());
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(&cfg, &out.stdout).unwrap();
    let run = dir.path().join("run");
    let sim = intpinn(&["--config", path(&cfg), "--out", path(&run), "simulate"]);
    assert!(sim.status.success(), "{}", String::from_utf8_lossy(&sim.stderr));
}

#[test]
fn simulate_writes_traces_with_hash_preamble() {
    let dir = tempfile::tempdir().unwrap();
    let out = intpinn(&["--out", path(dir.path()), "simulate"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["train_1.csv", "train_2.csv", "validation.csv"] {
        let text = std::fs::read_to_string(dir.path().join(f)).unwrap();
        assert!(text.starts_with("# config_hash="), "{f}");
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        let expected = if f == "validation.csv" {
            "time_s,current_A,voltage_V,soc,vc_V"
        } else {
            "time_s,current_A,voltage_V"
        };
        assert_eq!(header, expected, "{f}");
        // 3600 samples at 1 s spacing plus the header
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 3600 + 1, "{f}");
    }
    assert!(dir.path().join("run.log").is_file());
}

#[test]
fn zero_epochs_reports_the_initial_guess() {
    let dir = tempfile::tempdir().unwrap();
    let out = intpinn(&[
        "--out",
        path(dir.path()),
        "--epochs",
        "0",
        "--report-every",
        "0",
        "train",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report = std::fs::read_to_string(dir.path().join("ident_report.csv")).unwrap();
    let rows: Vec<&str> = report.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let err: f64 = row.rsplit(',').next().unwrap().parse().unwrap();
        assert!((err - 50.0).abs() < 1e-9, "{row}");
    }
    assert!(dir.path().join("checkpoint.json").is_file());
}

#[test]
fn train_then_eval_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let t = intpinn(&["--out", path(&run), "--epochs", "2", "--report-every", "0", "train"]);
    assert!(t.status.success(), "{}", String::from_utf8_lossy(&t.stderr));
    let ev = dir.path().join("eval");
    let ck = run.join("checkpoint.json");
    let e = intpinn(&["--out", path(&ev), "eval", "--checkpoint", path(&ck)]);
    assert!(e.status.success(), "{}", String::from_utf8_lossy(&e.stderr));
    for f in ["ident_report.csv", "state_errors.csv", "validation_trace.csv"] {
        let text = std::fs::read_to_string(ev.join(f)).unwrap();
        assert!(text.contains("# checkpoint_config_hash="), "{f}");
    }
}

#[test]
fn gradcheck_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = intpinn(&["--out", path(dir.path()), "gradcheck"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("integration: 53 entries"), "{stdout}");
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = intpinn(&["--config", path(&dir.path().join("nope.toml")), "simulate"]);
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "output_dir = \"x\"\nlearning_rate = 0.1\n").unwrap();
    let out = intpinn(&["--config", path(&cfg), "simulate"]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn resume_from_foreign_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let t = intpinn(&["--out", path(&run), "--epochs", "1", "--report-every", "0", "train"]);
    assert!(t.status.success());
    let ck = run.join("checkpoint.json");
    let other = dir.path().join("other");
    let r = intpinn(&[
        "--out",
        path(&other),
        "--seed",
        "99",
        "--epochs",
        "2",
        "train",
        "--resume",
        path(&ck),
    ]);
    assert_eq!(r.status.code(), Some(1), "{}", String::from_utf8_lossy(&r.stderr));
}
