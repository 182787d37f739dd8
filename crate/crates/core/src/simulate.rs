//! Ground-truth traces from the equivalent-circuit model.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::csvfmt::{self, fmt12};
use crate::ecm::{f_dynamics, g_output, EcmParams, EcmState, LambdaVec, OcvPoly};
use crate::error::{Error, Result};
use crate::profile::{current_mid, sample_interval, CurrentProfile};
use crate::rng::PortableRng;

/// Unmeasurable states, present only on simulated (or validation) traces.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenStates {
    pub soc: Vec<f64>,
    pub vc: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TraceMeta {
    pub label: String,
    pub params: Option<EcmParams>,
    pub initial_state: Option<EcmState>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimTrace {
    pub dt: f64,
    pub currents: Vec<f64>,
    pub voltages: Vec<f64>,
    pub hidden: Option<HiddenStates>,
    pub meta: TraceMeta,
}

impl SimTrace {
    pub fn len(&self) -> usize {
        self.currents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.currents.is_empty()
    }

    pub fn label(&self) -> &str {
        &self.meta.label
    }

    pub fn time(&self, j: usize) -> f64 {
        j as f64 * self.dt
    }

    /// Copy without the hidden states, i.e. what a training pipeline sees.
    pub fn measurable_only(&self) -> SimTrace {
        SimTrace {
            hidden: None,
            ..self.clone()
        }
    }

    pub fn hidden_state(&self, j: usize) -> Option<EcmState> {
        self.hidden.as_ref().map(|h| EcmState::new(h.soc[j], h.vc[j]))
    }
}

/// One classical RK4 step over `[t_j, t_j + dt]` with stage currents
/// `(i0, i_mid, i_mid, i1)`.
pub fn rk4_step(x: &EcmState, i0: f64, i_mid: f64, i1: f64, dt: f64, lambda: &LambdaVec, q: f64) -> EcmState {
    let h2 = 0.5 * dt;
    let h6 = dt / 6.0;
    let k1 = f_dynamics(x, i0, lambda, q);
    let x2 = EcmState::new(x.z + h2 * k1.z, x.vc + h2 * k1.vc);
    let k2 = f_dynamics(&x2, i_mid, lambda, q);
    let x3 = EcmState::new(x.z + h2 * k2.z, x.vc + h2 * k2.vc);
    let k3 = f_dynamics(&x3, i_mid, lambda, q);
    let x4 = EcmState::new(x.z + dt * k3.z, x.vc + dt * k3.vc);
    let k4 = f_dynamics(&x4, i1, lambda, q);
    let comb = |a: f64, b: f64, c: f64, d: f64| ((a + 2.0 * b) + 2.0 * c) + d;
    EcmState::new(
        x.z + h6 * comb(k1.z, k2.z, k3.z, k4.z),
        x.vc + h6 * comb(k1.vc, k2.vc, k3.vc, k4.vc),
    )
}

/// Integrates the model under `profile` from `x0`, recording the
/// terminal voltage at every sample.
pub fn simulate(params: &EcmParams, poly: &OcvPoly, profile: &CurrentProfile, x0: EcmState) -> Result<SimTrace> {
    let lambda = params.lambda()?;
    let n = profile.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty current profile".into()));
    }
    if !(0.0..=1.0).contains(&x0.z) {
        return Err(Error::SocOutOfRange { index: 0, soc: x0.z });
    }
    let i = &profile.currents;
    let mut soc = Vec::with_capacity(n);
    let mut vc = Vec::with_capacity(n);
    let mut voltages = Vec::with_capacity(n);
    let mut x = x0;
    for j in 0..n {
        if j > 0 {
            let i_mid = current_mid(i, j - 1).expect("j - 1 + 1 < n");
            x = rk4_step(&x, i[j - 1], i_mid, i[j], profile.dt, &lambda, params.q);
            if !(0.0..=1.0).contains(&x.z) {
                return Err(Error::SocOutOfRange { index: j, soc: x.z });
            }
        }
        soc.push(x.z);
        vc.push(x.vc);
        voltages.push(g_output(&x, i[j], &lambda, poly));
    }
    Ok(SimTrace {
        dt: profile.dt,
        currents: i.clone(),
        voltages,
        hidden: Some(HiddenStates { soc, vc }),
        meta: TraceMeta {
            label: profile.label.clone(),
            params: Some(*params),
            initial_state: Some(x0),
            seed: None,
        },
    })
}

/// Adds i.i.d. zero-mean Gaussian noise to the voltages only.
pub fn add_gaussian_noise(trace: &SimTrace, sigma_v: f64, seed: u64) -> Result<SimTrace> {
    if !(sigma_v >= 0.0 && sigma_v.is_finite()) {
        return Err(Error::InvalidParameter(format!("sigma_v must be >= 0, got {sigma_v}")));
    }
    let mut out = trace.clone();
    if sigma_v == 0.0 {
        return Ok(out);
    }
    let mut rng = PortableRng::new(seed);
    for v in &mut out.voltages {
        *v += sigma_v * rng.standard_normal();
    }
    Ok(out)
}

pub const TRACE_COLUMNS: [&str; 3] = ["time_s", "current_A", "voltage_V"];
pub const HIDDEN_COLUMNS: [&str; 2] = ["soc", "vc_V"];

/// Renders a trace CSV. Hidden-state columns only when `include_hidden`
/// and the trace has them. Lines in `preamble` are written as `# ` comments.
pub fn trace_csv_string(trace: &SimTrace, include_hidden: bool, preamble: &[String]) -> String {
    let hidden = trace.hidden.as_ref().filter(|_| include_hidden);
    let mut out = String::with_capacity(trace.len() * 64);
    for line in preamble {
        let _ = writeln!(out, "# {line}");
    }
    out.push_str(&TRACE_COLUMNS.join(","));
    if hidden.is_some() {
        out.push(',');
        out.push_str(&HIDDEN_COLUMNS.join(","));
    }
    out.push('\n');
    for j in 0..trace.len() {
        let _ = write!(
            out,
            "{},{},{}",
            fmt12(trace.time(j)),
            fmt12(trace.currents[j]),
            fmt12(trace.voltages[j])
        );
        if let Some(h) = hidden {
            let _ = write!(out, ",{},{}", fmt12(h.soc[j]), fmt12(h.vc[j]));
        }
        out.push('\n');
    }
    out
}

pub fn export_trace_csv(trace: &SimTrace, path: &Path, include_hidden: bool) -> Result<()> {
    export_trace_csv_with(trace, path, include_hidden, &[])
}

pub(crate) fn export_trace_csv_with(
    trace: &SimTrace,
    path: &Path,
    include_hidden: bool,
    preamble: &[String],
) -> Result<()> {
    std::fs::write(path, trace_csv_string(trace, include_hidden, preamble)).map_err(|e| Error::io(path, e))
}

pub fn load_trace_csv(path: &Path) -> Result<SimTrace> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    parse_trace_csv(&text, &path.display().to_string(), label)
}

pub fn parse_trace_csv(text: &str, source_name: &str, label: String) -> Result<SimTrace> {
    let table = csvfmt::parse_table(text, source_name, &TRACE_COLUMNS)?;
    let dt = sample_interval(&table.columns[0])?;
    let hidden = match (table.column("soc"), table.column("vc_V")) {
        (Some(soc), Some(vc)) => Some(HiddenStates {
            soc: soc.to_vec(),
            vc: vc.to_vec(),
        }),
        _ => None,
    };
    Ok(SimTrace {
        dt,
        currents: table.columns[1].clone(),
        voltages: table.columns[2].clone(),
        hidden,
        meta: TraceMeta {
            label,
            ..TraceMeta::default()
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn truth() -> EcmParams {
        EcmParams::new(0.06, 0.03, 1000.0, 2.0).unwrap()
    }

    fn constant(current: f64, samples: usize) -> CurrentProfile {
        CurrentProfile::new(1.0, vec![current; samples], "const").unwrap()
    }

    #[test]
    fn constant_discharge_soc_closed_form() {
        // z(t) = z0 + I t / (3600 Q): 0.8 - 2 * 1800 / 7200 = 0.3
        let tr = simulate(
            &truth(),
            &OcvPoly::default(),
            &constant(-2.0, 1801),
            EcmState::new(0.8, 0.0),
        )
        .unwrap();
        let z = tr.hidden.as_ref().unwrap().soc.last().copied().unwrap();
        assert!((z - 0.3).abs() < 1e-12, "z = {z}");
    }

    #[test]
    fn full_hour_at_one_c_empties_the_cell() {
        // 1C from 80 % reaches 0 at t = 2880 s; rounding decides which side
        let e = simulate(
            &truth(),
            &OcvPoly::default(),
            &constant(-2.0, 3601),
            EcmState::new(0.8, 0.0),
        )
        .unwrap_err();
        assert!(matches!(e, Error::SocOutOfRange { index: 2880 | 2881, .. }), "{e}");
    }

    #[test]
    fn constant_discharge_rc_closed_form() {
        let tr = simulate(
            &truth(),
            &OcvPoly::default(),
            &constant(-2.0, 601),
            EcmState::new(0.8, 0.0),
        )
        .unwrap();
        let vc = &tr.hidden.as_ref().unwrap().vc;
        for (j, v) in vc.iter().enumerate() {
            let exact = -0.06 * (1.0 - (-(j as f64) / 30.0).exp());
            assert!((v - exact).abs() < 1e-6, "sample {j}: {v} vs {exact}");
        }
    }

    #[test]
    fn rc_general_closed_form_with_initial_vc() {
        let lam = truth().lambda().unwrap();
        let (vc0, i) = (0.03, 1.5);
        let tr = simulate(
            &truth(),
            &OcvPoly::default(),
            &constant(i, 601),
            EcmState::new(0.2, vc0),
        )
        .unwrap();
        for (j, v) in tr.hidden.as_ref().unwrap().vc.iter().enumerate() {
            let e = (lam.l1 * j as f64).exp();
            let exact = vc0 * e + (lam.l2 / -lam.l1) * i * (1.0 - e);
            assert!((v - exact).abs() < 1e-6);
        }
    }

    #[test]
    fn soc_is_midpoint_sum() {
        let currents: Vec<f64> = (0..500).map(|k| ((k * 37) % 11) as f64 - 5.5).collect();
        let p = CurrentProfile::new(1.0, currents.clone(), "x").unwrap();
        let tr = simulate(&truth(), &OcvPoly::default(), &p, EcmState::new(0.5, 0.0)).unwrap();
        let mut z = 0.5;
        for (j, s) in tr.hidden.as_ref().unwrap().soc.iter().enumerate() {
            if j > 0 {
                z += 0.5 * (currents[j - 1] + currents[j]) * 1.0 / 7200.0;
            }
            assert!((s - z).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_current_is_rest() {
        let poly = OcvPoly::default();
        let tr = simulate(&truth(), &poly, &constant(0.0, 50), EcmState::new(0.6, 0.0)).unwrap();
        assert!(tr.voltages.iter().all(|&v| v == poly.ocv(0.6)));
        assert!(tr.hidden.as_ref().unwrap().soc.iter().all(|&z| z == 0.6));
    }

    #[test]
    fn voltage_is_output_map_of_states() {
        let p = CurrentProfile::new(1.0, vec![1.0, -3.0, 2.0, 0.5], "x").unwrap();
        let poly = OcvPoly::default();
        let tr = simulate(&truth(), &poly, &p, EcmState::new(0.5, 0.01)).unwrap();
        let lam = truth().lambda().unwrap();
        for j in 0..tr.len() {
            assert_eq!(
                tr.voltages[j],
                g_output(&tr.hidden_state(j).unwrap(), tr.currents[j], &lam, &poly)
            );
        }
    }

    #[test]
    fn soc_violation_aborts_with_index() {
        let e = simulate(
            &truth(),
            &OcvPoly::default(),
            &constant(-4.0, 4000),
            EcmState::new(0.5, 0.0),
        )
        .unwrap_err();
        // 0.5 / (4 A / 7200 As) = 900 s
        assert!(matches!(e, Error::SocOutOfRange { index: 901, .. }), "{e}");
    }

    #[test]
    fn noise_zero_sigma_identity() {
        let tr = simulate(
            &truth(),
            &OcvPoly::default(),
            &constant(-1.0, 100),
            EcmState::new(0.8, 0.0),
        )
        .unwrap();
        assert_eq!(add_gaussian_noise(&tr, 0.0, 1).unwrap(), tr);
        assert_eq!(
            add_gaussian_noise(&tr, 0.01, 1).unwrap(),
            add_gaussian_noise(&tr, 0.01, 1).unwrap()
        );
        assert!(add_gaussian_noise(&tr, -1.0, 1).is_err());
    }

    #[test]
    fn noise_is_zero_mean() {
        let p = CurrentProfile::new(1.0, vec![0.0; 100_000], "rest").unwrap();
        let tr = simulate(&truth(), &OcvPoly::default(), &p, EcmState::new(0.5, 0.0)).unwrap();
        let sigma = 0.005;
        let noisy = add_gaussian_noise(&tr, sigma, 9).unwrap();
        let mean = noisy.voltages.iter().zip(&tr.voltages).map(|(a, b)| a - b).sum::<f64>() / 1e5;
        assert!(mean.abs() < 3.0 * sigma / 1e5f64.sqrt());
        assert_eq!(noisy.currents, tr.currents);
        assert_eq!(noisy.hidden, tr.hidden);
    }

    #[test]
    fn csv_round_trip_and_columns() {
        let p = CurrentProfile::new(1.0, vec![1.0, -3.0, 2.0, 0.5, -0.25], "x").unwrap();
        let tr = simulate(&truth(), &OcvPoly::default(), &p, EcmState::new(0.5, 0.01)).unwrap();
        let dir = tempfile::tempdir().unwrap();

        let path = dir.path().join("full.csv");
        export_trace_csv(&tr, &path, true).unwrap();
        let back = load_trace_csv(&path).unwrap();
        let (h, hb) = (tr.hidden.as_ref().unwrap(), back.hidden.as_ref().unwrap());
        for j in 0..tr.len() {
            assert!((tr.currents[j] - back.currents[j]).abs() < 1e-9);
            assert!((tr.voltages[j] - back.voltages[j]).abs() < 1e-9);
            assert!((h.soc[j] - hb.soc[j]).abs() < 1e-9);
            assert!((h.vc[j] - hb.vc[j]).abs() < 1e-9);
        }

        let path = dir.path().join("meas.csv");
        export_trace_csv(&tr, &path, false).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "time_s,current_A,voltage_V");
        assert!(text.lines().skip(1).all(|l| l.split(',').count() == 3));
        assert!(load_trace_csv(&path).unwrap().hidden.is_none());
    }

    #[test]
    fn csv_missing_voltage() {
        let e = parse_trace_csv("time_s,current_A\n0,1\n1,1\n", "t", "x".into()).unwrap_err();
        assert!(
            matches!(e, Error::MissingColumn { ref column, .. } if column == "voltage_V"),
            "{e}"
        );
    }
}
