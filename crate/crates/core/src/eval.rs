//! Validation inference and result reports: parameter identification
//! errors, state-estimation errors, and per-sample predicted-vs-true traces.

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::Tape;
use crate::csvfmt::fmt12;
use crate::ecm::{params_from_lambda, EcmParams, LambdaVec, OcvPoly};
use crate::error::{Error, Result};
use crate::losses::{StateEstimator, WindowRef};
use crate::simulate::SimTrace;

/// Windows per tape pass during inference.
const INFER_BATCH: usize = 256;

/// Predictions for samples `history..len` of one trace.
#[derive(Debug, Clone, PartialEq)]
pub struct StateEstimates {
    /// Index of the first predicted sample (`history`).
    pub first: usize,
    pub z: Vec<f64>,
    pub vc: Vec<f64>,
    pub v: Vec<f64>,
}

impl StateEstimates {
    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }
}

/// Runs the estimator on every window `j - history ..= j`, `j >= history`,
/// and maps each estimate through the output equation with `lambda`.
/// Pure inference: nothing is integrated.
pub fn estimate_states(
    estimator: &dyn StateEstimator,
    lambda: &LambdaVec,
    poly: &OcvPoly,
    trace: &SimTrace,
) -> Result<StateEstimates> {
    let ell = estimator.history();
    if trace.len() <= ell {
        return Err(Error::TraceTooShort {
            label: trace.label().to_string(),
            len: trace.len(),
            needed: ell + 1,
        });
    }
    let traces = std::slice::from_ref(trace);
    let n = trace.len() - ell;
    let mut out = StateEstimates {
        first: ell,
        z: Vec::with_capacity(n),
        vc: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
    };
    let mut tape = Tape::new(0);
    let starts: Vec<WindowRef> = (ell..trace.len()).map(|j| WindowRef::new(0, j)).collect();
    for chunk in starts.chunks(INFER_BATCH) {
        let x = estimator.estimate(&mut tape, traces, chunk)?;
        out.z.extend_from_slice(tape.value(x[0]));
        out.vc.extend_from_slice(tape.value(x[1]));
        tape.clear();
    }
    for (k, j) in (ell..trace.len()).enumerate() {
        let i = trace.currents[j];
        out.v.push(poly.ocv(out.z[k]) + out.vc[k] + lambda.l3 * i);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentRow {
    pub name: String,
    pub true_value: f64,
    pub identified: f64,
    /// `|identified - true| / true * 100`
    pub rel_error_pct: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IdentReport {
    pub rows: Vec<IdentRow>,
}

impl IdentReport {
    pub fn get(&self, name: &str) -> Option<&IdentRow> {
        self.rows.iter().find(|r| r.name == name)
    }

    pub fn max_error_pct(&self) -> f64 {
        self.rows.iter().map(|r| r.rel_error_pct).fold(0.0, f64::max)
    }
}

fn rel_pct(identified: f64, truth: f64) -> f64 {
    (identified - truth).abs() / truth.abs() * 100.0
}

/// Identified `(R0, R1, C)` against the truth.
pub fn ident_report(lambda: &LambdaVec, truth: &EcmParams) -> Result<IdentReport> {
    let id = params_from_lambda(lambda, truth.q)?;
    let rows = [("R0", truth.r0, id.r0), ("R1", truth.r1, id.r1), ("C", truth.c, id.c)]
        .into_iter()
        .map(|(name, t, i)| IdentRow {
            name: name.to_string(),
            true_value: t,
            identified: i,
            rel_error_pct: rel_pct(i, t),
        })
        .collect();
    Ok(IdentReport { rows })
}

pub const IDENT_COLUMNS: [&str; 4] = ["parameter", "true", "identified", "rel_error_pct"];

pub fn ident_csv_string(report: &IdentReport, preamble: &[String]) -> String {
    let mut out = comment_lines(preamble);
    out.push_str(&IDENT_COLUMNS.join(","));
    out.push('\n');
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.name,
            fmt12(r.true_value),
            fmt12(r.identified),
            fmt12(r.rel_error_pct)
        );
    }
    out
}

pub fn parse_ident_csv(text: &str, source_name: &str) -> Result<IdentReport> {
    let parse_err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| parse_err(1, e.to_string()))?.clone();
    if headers.iter().ne(IDENT_COLUMNS) {
        return Err(parse_err(1, format!("expected columns {}", IDENT_COLUMNS.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| parse_err(0, e.to_string()))?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| parse_err(line, format!("not a number: `{}`", &record[i])))
        };
        rows.push(IdentRow {
            name: record[0].to_string(),
            true_value: num(1)?,
            identified: num(2)?,
            rel_error_pct: num(3)?,
        });
    }
    Ok(IdentReport { rows })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub mae: f64,
    pub rmse: f64,
}

fn stats(errors: impl Iterator<Item = f64>) -> ErrorStats {
    let (mut n, mut abs, mut sq) = (0usize, 0.0, 0.0);
    for e in errors {
        n += 1;
        abs += e.abs();
        sq += e * e;
    }
    let n = n.max(1) as f64;
    ErrorStats {
        mae: abs / n,
        rmse: (sq / n).sqrt(),
    }
}

/// State errors over the predicted samples. SoC in percentage points,
/// voltages in mV.
#[derive(Debug, Clone, PartialEq)]
pub struct StateErrorReport {
    pub samples: usize,
    pub soc_pp: ErrorStats,
    pub vc_mv: ErrorStats,
    pub v_mv: ErrorStats,
}

pub fn state_errors(est: &StateEstimates, trace: &SimTrace) -> Result<StateErrorReport> {
    let h = trace.hidden.as_ref().ok_or_else(|| {
        Error::InvalidParameter(format!("trace `{}` has no true states to compare with", trace.label()))
    })?;
    let r = est.first..est.first + est.len();
    if r.end != trace.len() {
        return Err(Error::InvalidParameter(format!(
            "estimates cover samples {}..{}, trace has {}",
            r.start,
            r.end,
            trace.len()
        )));
    }
    let soc = stats(est.z.iter().zip(&h.soc[r.clone()]).map(|(a, b)| (a - b) * 100.0));
    let vc = stats(est.vc.iter().zip(&h.vc[r.clone()]).map(|(a, b)| (a - b) * 1000.0));
    let v = stats(est.v.iter().zip(&trace.voltages[r]).map(|(a, b)| (a - b) * 1000.0));
    Ok(StateErrorReport {
        samples: est.len(),
        soc_pp: soc,
        vc_mv: vc,
        v_mv: v,
    })
}

pub const STATE_ERROR_COLUMNS: [&str; 4] = ["quantity", "unit", "mae", "rmse"];

pub fn state_errors_csv_string(report: &StateErrorReport, preamble: &[String]) -> String {
    let mut out = comment_lines(preamble);
    out.push_str(&STATE_ERROR_COLUMNS.join(","));
    out.push('\n');
    for (q, unit, s) in [
        ("soc", "pp", report.soc_pp),
        ("vc", "mV", report.vc_mv),
        ("v", "mV", report.v_mv),
    ] {
        let _ = writeln!(out, "{q},{unit},{},{}", fmt12(s.mae), fmt12(s.rmse));
    }
    out
}

pub const VALIDATION_COLUMNS: [&str; 7] = ["time_s", "z_true", "z_hat", "vc_true", "vc_hat", "v_true", "v_hat"];

pub fn validation_csv_string(est: &StateEstimates, trace: &SimTrace, preamble: &[String]) -> Result<String> {
    let h = trace
        .hidden
        .as_ref()
        .ok_or_else(|| Error::InvalidParameter(format!("trace `{}` has no true states to export", trace.label())))?;
    let mut out = comment_lines(preamble);
    out.push_str(&VALIDATION_COLUMNS.join(","));
    out.push('\n');
    for k in 0..est.len() {
        let j = est.first + k;
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt12(trace.time(j)),
            fmt12(h.soc[j]),
            fmt12(est.z[k]),
            fmt12(h.vc[j]),
            fmt12(est.vc[k]),
            fmt12(trace.voltages[j]),
            fmt12(est.v[k])
        );
    }
    Ok(out)
}

fn comment_lines(preamble: &[String]) -> String {
    let mut out = String::new();
    for line in preamble {
        let _ = writeln!(out, "# {line}");
    }
    out
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `ident_report.csv`, and with a validation trace also
/// `state_errors.csv` and `validation_trace.csv`, into `out_dir`.
pub fn export_report(
    ident: &IdentReport,
    validation: Option<(&StateErrorReport, &StateEstimates, &SimTrace)>,
    out_dir: &Path,
    preamble: &[String],
) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_text(&out_dir.join("ident_report.csv"), &ident_csv_string(ident, preamble))?;
    if let Some((errors, est, trace)) = validation {
        write_text(
            &out_dir.join("state_errors.csv"),
            &state_errors_csv_string(errors, preamble),
        )?;
        write_text(
            &out_dir.join("validation_trace.csv"),
            &validation_csv_string(est, trace, preamble)?,
        )?;
    }
    Ok(())
}
