//! Physics losses: the integration-embedded output loss, the classic
//! multi-term PINN loss it is compared against, and box projection of the
//! identified parameters.
//!
//! Both losses are recorded on a [`Tape`] over a batch of windows, so one
//! backward pass yields the gradient with respect to the network weights
//! and the model parameters together.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::ecm::{LambdaVec, OcvPoly};
use crate::error::{Error, Result};
use crate::network::{forward_on_tape, place_on_tape, NetworkParams, NormSpec};
use crate::profile::current_mid;
use crate::simulate::SimTrace;

/// An ODE system `dx/dt = f(x, u; lambda)`, `y = g(x, u; lambda)`,
/// `0 = h(x, u; lambda)`, evaluated on batched tape columns.
///
/// States, outputs and constraints are lists of `batch x 1` nodes; the
/// input `u` is a `batch x 1` node and every entry of `lambda` is `1x1`.
pub trait OdeSystem {
    /// `p`
    fn state_dim(&self) -> usize;
    /// `q`
    fn output_dim(&self) -> usize;
    /// `r`
    fn constraint_dim(&self) -> usize {
        0
    }
    fn dynamics(&self, tape: &mut Tape, x: &[Var], u: Var, lambda: &[Var]) -> Vec<Var>;
    fn output(&self, tape: &mut Tape, x: &[Var], u: Var, lambda: &[Var]) -> Vec<Var>;
    fn constraints(&self, _tape: &mut Tape, _x: &[Var], _u: Var, _lambda: &[Var]) -> Vec<Var> {
        Vec::new()
    }
}

/// The equivalent-circuit model with `lambda = (l1, l2, l3)` and known
/// capacity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EcmSystem {
    pub poly: OcvPoly,
    pub capacity_ah: f64,
}

impl OdeSystem for EcmSystem {
    fn state_dim(&self) -> usize {
        2
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn dynamics(&self, tape: &mut Tape, x: &[Var], u: Var, lambda: &[Var]) -> Vec<Var> {
        let dz = tape.scale(u, 1.0 / (3600.0 * self.capacity_ah));
        let decay = tape.mul_scalar(x[1], lambda[0]);
        let drive = tape.mul_scalar(u, lambda[1]);
        let dvc = tape.add(decay, drive);
        vec![dz, dvc]
    }

    fn output(&self, tape: &mut Tape, x: &[Var], u: Var, lambda: &[Var]) -> Vec<Var> {
        let ocv = tape.poly(x[0], &self.poly.coeffs);
        let v = tape.add(ocv, x[1]);
        let ohmic = tape.mul_scalar(u, lambda[2]);
        vec![tape.add(v, ohmic)]
    }
}

/// One training window: the state is estimated at `start` of trace `trace`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct WindowRef {
    pub trace: usize,
    pub start: usize,
}

impl WindowRef {
    pub fn new(trace: usize, start: usize) -> Self {
        Self { trace, start }
    }
}

/// Produces batched state estimates at window starts.
pub trait StateEstimator {
    /// Samples of history needed before a start.
    fn history(&self) -> usize;

    /// One `batch x 1` node per state component.
    fn estimate(&self, tape: &mut Tape, traces: &[SimTrace], batch: &[WindowRef]) -> Result<Vec<Var>>;
}

/// The recurrent network as an estimator. With `slot = Some(base)` the
/// weights are trainable leaves bound to gradient slots `base..`.
#[derive(Debug, Clone, Copy)]
pub struct NetworkEstimator<'a> {
    pub params: &'a NetworkParams,
    pub history: usize,
    pub norm: NormSpec,
    pub slot: Option<usize>,
}

impl StateEstimator for NetworkEstimator<'_> {
    fn history(&self) -> usize {
        self.history
    }

    fn estimate(&self, tape: &mut Tape, traces: &[SimTrace], batch: &[WindowRef]) -> Result<Vec<Var>> {
        let vars = place_on_tape(tape, self.params, self.slot);
        let ends: Vec<(usize, usize)> = batch.iter().map(|w| (w.trace, w.start)).collect();
        let out = forward_on_tape(tape, &vars, self.params.shape, traces, &ends, self.history, &self.norm)?;
        Ok((0..self.params.shape.outputs).map(|c| tape.column(out, c)).collect())
    }
}

/// Returns the simulator's hidden states; needs traces that carry them.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleEstimator {
    pub history: usize,
}

impl StateEstimator for OracleEstimator {
    fn history(&self) -> usize {
        self.history
    }

    fn estimate(&self, tape: &mut Tape, traces: &[SimTrace], batch: &[WindowRef]) -> Result<Vec<Var>> {
        let mut soc = Vec::with_capacity(batch.len());
        let mut vc = Vec::with_capacity(batch.len());
        for w in batch {
            let tr = &traces[w.trace];
            let h = tr.hidden.as_ref().ok_or_else(|| {
                Error::InvalidParameter(format!("trace `{}` has no hidden states for the oracle", tr.label()))
            })?;
            soc.push(h.soc[w.start]);
            vc.push(h.vc[w.start]);
        }
        let n = batch.len();
        Ok(vec![tape.constant(&soc, n, 1), tape.constant(&vc, n, 1)])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    /// Rollout length `n` in integration steps.
    pub rollout: usize,
    /// Output weights `omega_g`, one per output.
    pub omega_g: Vec<f64>,
    /// Constraint weights `omega_h`, one per constraint.
    #[serde(default)]
    pub omega_h: Vec<f64>,
    /// State-residual weights `omega_f` (classic PINN loss only).
    pub omega_f: Vec<f64>,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            rollout: 30,
            omega_g: vec![1.0],
            omega_h: Vec::new(),
            omega_f: vec![1.0, 1.0],
        }
    }
}

impl LossConfig {
    pub fn validate(&self, system: &dyn OdeSystem) -> Result<()> {
        if self.rollout == 0 {
            return Err(Error::InvalidParameter("rollout length must be at least 1".into()));
        }
        let checks = [
            ("omega_g", &self.omega_g, system.output_dim()),
            ("omega_h", &self.omega_h, system.constraint_dim()),
            ("omega_f", &self.omega_f, system.state_dim()),
        ];
        for (name, w, n) in checks {
            if w.len() != n {
                return Err(Error::InvalidParameter(format!(
                    "{name} needs {n} entries, got {}",
                    w.len()
                )));
            }
            if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "{name} entries must be finite and >= 0"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TermKind {
    Output,
    Constraint,
    Dynamics,
}

/// One weighted component `weight * value` of a loss.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm {
    pub kind: TermKind,
    /// Component index within its kind.
    pub index: usize,
    pub weight: f64,
    /// Unweighted term value (`1x1`).
    pub value: Var,
}

impl LossTerm {
    pub fn name(&self) -> String {
        let prefix = match self.kind {
            TermKind::Output => "g",
            TermKind::Constraint => "h",
            TermKind::Dynamics => "f",
        };
        format!("L_{prefix}{}", self.index + 1)
    }
}

#[derive(Debug, Clone)]
pub struct LossValue {
    /// Weighted sum of all terms (`1x1`).
    pub total: Var,
    pub terms: Vec<LossTerm>,
}

/// Per-row input columns for a rollout: samples `start + k` and the
/// midpoints between them.
#[derive(Debug, Clone)]
pub struct StageInputs {
    pub at: Vec<Var>,
    pub mid: Vec<Var>,
}

pub fn stage_inputs(tape: &mut Tape, traces: &[SimTrace], batch: &[WindowRef], steps: usize) -> Result<StageInputs> {
    for w in batch {
        let len = traces.get(w.trace).map_or(0, SimTrace::len);
        if w.start + steps >= len {
            return Err(Error::InvalidWindow {
                start: w.start,
                reason: format!("rollout of {steps} steps leaves a trace of length {len}"),
            });
        }
    }
    let n = batch.len();
    let at = (0..=steps)
        .map(|k| {
            tape.constant_with(n, 1, |buf| {
                for (b, w) in batch.iter().enumerate() {
                    buf[b] = traces[w.trace].currents[w.start + k];
                }
            })
        })
        .collect();
    let mid = (0..steps)
        .map(|k| {
            tape.constant_with(n, 1, |buf| {
                for (b, w) in batch.iter().enumerate() {
                    buf[b] = current_mid(&traces[w.trace].currents, w.start + k).expect("range checked");
                }
            })
        })
        .collect();
    Ok(StageInputs { at, mid })
}

/// Classical RK4 from `x0` for `steps` steps of size `dt`, with stage
/// inputs `(u_k, u_mid, u_mid, u_{k+1})`. Element 0 is `x0` itself; the
/// estimator is not consulted again inside the rollout.
pub fn rk4_rollout(
    tape: &mut Tape,
    system: &dyn OdeSystem,
    x0: Vec<Var>,
    inputs: &StageInputs,
    lambda: &[Var],
    dt: f64,
    steps: usize,
) -> Result<Vec<Vec<Var>>> {
    if inputs.at.len() < steps + 1 || inputs.mid.len() < steps {
        return Err(Error::InvalidParameter(format!(
            "rollout of {steps} steps needs {} stage inputs, got {}",
            steps + 1,
            inputs.at.len()
        )));
    }
    let h2 = 0.5 * dt;
    let h6 = dt / 6.0;
    let mut states = Vec::with_capacity(steps + 1);
    states.push(x0);
    for k in 0..steps {
        let x = states.last().expect("non-empty").clone();
        let shifted = |tape: &mut Tape, a: f64, ks: &[Var]| -> Vec<Var> {
            x.iter().zip(ks).map(|(&xi, &ki)| tape.axpy(a, ki, xi)).collect()
        };
        let k1 = system.dynamics(tape, &x, inputs.at[k], lambda);
        let x2 = shifted(tape, h2, &k1);
        let k2 = system.dynamics(tape, &x2, inputs.mid[k], lambda);
        let x3 = shifted(tape, h2, &k2);
        let k3 = system.dynamics(tape, &x3, inputs.mid[k], lambda);
        let x4 = shifted(tape, dt, &k3);
        let k4 = system.dynamics(tape, &x4, inputs.at[k + 1], lambda);
        let next = (0..x.len())
            .map(|i| {
                let s = tape.axpy(2.0, k2[i], k1[i]);
                let s = tape.axpy(2.0, k3[i], s);
                let s = tape.add(s, k4[i]);
                tape.axpy(h6, s, x[i])
            })
            .collect();
        states.push(next);
    }
    Ok(states)
}

fn check_shared_dt(traces: &[SimTrace], batch: &[WindowRef]) -> Result<f64> {
    let first = batch
        .first()
        .ok_or_else(|| Error::InvalidParameter("empty batch".into()))?;
    let dt = traces
        .get(first.trace)
        .ok_or_else(|| Error::InvalidParameter(format!("no trace {}", first.trace)))?
        .dt;
    for w in batch {
        let t = traces
            .get(w.trace)
            .ok_or_else(|| Error::InvalidParameter(format!("no trace {}", w.trace)))?;
        if t.dt != dt {
            return Err(Error::InvalidParameter(format!(
                "traces in one batch must share dt ({} vs {dt})",
                t.dt
            )));
        }
    }
    Ok(dt)
}

/// Measured outputs at `start + k` as a `batch x 1` column.
fn measured(tape: &mut Tape, traces: &[SimTrace], batch: &[WindowRef], k: usize) -> Var {
    tape.constant_with(batch.len(), 1, |buf| {
        for (b, w) in batch.iter().enumerate() {
            buf[b] = traces[w.trace].voltages[w.start + k];
        }
    })
}

fn sum_of_squares(tape: &mut Tape, v: Var) -> Var {
    let sq = tape.mul(v, v);
    tape.sum(sq)
}

/// Weighted total `sum_i w_i * term_i`.
fn weighted_total(tape: &mut Tape, terms: &[LossTerm]) -> Var {
    let mut total = tape.scalar_const(0.0);
    for t in terms {
        total = tape.axpy(t.weight, t.value, total);
    }
    total
}

/// Sorts the batch into the canonical `(trace, start)` order so the
/// floating-point summation order never depends on how windows arrived.
fn canonical(batch: &[WindowRef]) -> Vec<WindowRef> {
    let mut b = batch.to_vec();
    b.sort_unstable();
    b
}

/// Integration-embedded output loss.
///
/// For each window start `j` the estimator gives `x^j`; RK4 through the
/// known dynamics yields `x^j .. x^{j+n}`, the output map gives
/// `y_hat^{j+k}`, and every output component contributes
/// `sum_j sum_{k=0..n} (y^{j+k} - y_hat^{j+k})^2 / (n * batch)`.
/// Constraint components (if the system has any) are accumulated the same
/// way from `h(x^{j+k})`.
#[allow(clippy::too_many_arguments)]
pub fn integration_loss(
    tape: &mut Tape,
    estimator: &dyn StateEstimator,
    system: &dyn OdeSystem,
    traces: &[SimTrace],
    batch: &[WindowRef],
    lambda: &[Var],
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate(system)?;
    let batch = canonical(batch);
    let dt = check_shared_dt(traces, &batch)?;
    let ell = estimator.history();
    let n = cfg.rollout;
    for w in &batch {
        let len = traces[w.trace].len();
        if w.start < ell || w.start + n >= len {
            return Err(Error::InvalidWindow {
                start: w.start,
                reason: format!("need {ell} <= start and start + {n} < {len}"),
            });
        }
    }
    let x0 = estimator.estimate(tape, traces, &batch)?;
    let inputs = stage_inputs(tape, traces, &batch, n)?;
    let states = rk4_rollout(tape, system, x0, &inputs, lambda, dt, n)?;

    let q = system.output_dim();
    let r = system.constraint_dim();
    let mut out_acc: Vec<Option<Var>> = vec![None; q];
    let mut con_acc: Vec<Option<Var>> = vec![None; r];
    let add_to = |tape: &mut Tape, slot: &mut Option<Var>, v: Var| {
        *slot = Some(match *slot {
            None => v,
            Some(acc) => tape.add(acc, v),
        });
    };
    for (k, x) in states.iter().enumerate() {
        let y_hat = system.output(tape, x, inputs.at[k], lambda);
        // single measured channel (terminal voltage)
        let y = measured(tape, traces, &batch, k);
        for (i, &yh) in y_hat.iter().enumerate() {
            let resid = tape.sub(y, yh);
            let s = sum_of_squares(tape, resid);
            add_to(tape, &mut out_acc[i], s);
        }
        if r > 0 {
            let h = system.constraints(tape, x, inputs.at[k], lambda);
            for (i, &hv) in h.iter().enumerate() {
                let s = sum_of_squares(tape, hv);
                add_to(tape, &mut con_acc[i], s);
            }
        }
    }
    let norm = 1.0 / (n as f64 * batch.len() as f64);
    let mut terms = Vec::with_capacity(q + r);
    for (i, acc) in out_acc.into_iter().enumerate() {
        terms.push(LossTerm {
            kind: TermKind::Output,
            index: i,
            weight: cfg.omega_g[i],
            value: tape.scale(acc.expect("n + 1 >= 1 samples"), norm),
        });
    }
    for (i, acc) in con_acc.into_iter().enumerate() {
        terms.push(LossTerm {
            kind: TermKind::Constraint,
            index: i,
            weight: cfg.omega_h[i],
            value: tape.scale(acc.expect("n + 1 >= 1 samples"), norm),
        });
    }
    let total = weighted_total(tape, &terms);
    Ok(LossValue { total, terms })
}

/// Classic PINN loss: one residual term per state equation, per output
/// and per constraint, each a batch mean of squares. The state derivative
/// is the forward difference of the estimates at `j` and `j + 1`.
#[allow(clippy::too_many_arguments)]
pub fn standard_pinn_loss(
    tape: &mut Tape,
    estimator: &dyn StateEstimator,
    system: &dyn OdeSystem,
    traces: &[SimTrace],
    batch: &[WindowRef],
    lambda: &[Var],
    cfg: &LossConfig,
) -> Result<LossValue> {
    cfg.validate(system)?;
    let batch = canonical(batch);
    let dt = check_shared_dt(traces, &batch)?;
    let ell = estimator.history();
    for w in &batch {
        let len = traces[w.trace].len();
        if w.start < ell || w.start + 1 >= len {
            return Err(Error::InvalidWindow {
                start: w.start,
                reason: format!("need {ell} <= start and start + 1 < {len}"),
            });
        }
    }
    let next: Vec<WindowRef> = batch.iter().map(|w| WindowRef::new(w.trace, w.start + 1)).collect();
    let x = estimator.estimate(tape, traces, &batch)?;
    let x_next = estimator.estimate(tape, traces, &next)?;
    let u = tape.constant_with(batch.len(), 1, |buf| {
        for (b, w) in batch.iter().enumerate() {
            buf[b] = traces[w.trace].currents[w.start];
        }
    });
    let mean = 1.0 / batch.len() as f64;
    let mut terms = Vec::new();

    let f = system.dynamics(tape, &x, u, lambda);
    for i in 0..system.state_dim() {
        let diff = tape.sub(x_next[i], x[i]);
        let slope = tape.scale(diff, 1.0 / dt);
        let resid = tape.sub(slope, f[i]);
        let s = sum_of_squares(tape, resid);
        terms.push(LossTerm {
            kind: TermKind::Dynamics,
            index: i,
            weight: cfg.omega_f[i],
            value: tape.scale(s, mean),
        });
    }
    let y = measured(tape, traces, &batch, 0);
    let y_hat = system.output(tape, &x, u, lambda);
    for (i, &yh) in y_hat.iter().enumerate() {
        let resid = tape.sub(y, yh);
        let s = sum_of_squares(tape, resid);
        terms.push(LossTerm {
            kind: TermKind::Output,
            index: i,
            weight: cfg.omega_g[i],
            value: tape.scale(s, mean),
        });
    }
    let h = system.constraints(tape, &x, u, lambda);
    for (i, &hv) in h.iter().enumerate() {
        let s = sum_of_squares(tape, hv);
        terms.push(LossTerm {
            kind: TermKind::Constraint,
            index: i,
            weight: cfg.omega_h[i],
            value: tape.scale(s, mean),
        });
    }
    let total = weighted_total(tape, &terms);
    Ok(LossValue { total, terms })
}

/// Closed interval `[min, max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub min: f64,
    pub max: f64,
}

impl Interval {
    pub fn new(min: f64, max: f64) -> Result<Self> {
        if !(min < max && min.is_finite() && max.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid interval [{min}, {max}]")));
        }
        Ok(Self { min, max })
    }

    pub fn contains(&self, x: f64) -> bool {
        (self.min..=self.max).contains(&x)
    }
}

/// Optional box per lambda component.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LambdaBounds {
    pub l1: Option<Interval>,
    pub l2: Option<Interval>,
    pub l3: Option<Interval>,
}

impl LambdaBounds {
    /// Boxes from keeping `R1` and `C` within `[lo, hi]` times reference
    /// values; `l3 = R0` stays unconstrained.
    pub fn from_rc_box(r1: f64, c: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(0.0 < lo && lo < hi) {
            return Err(Error::InvalidParameter(format!("need 0 < lo < hi, got {lo}, {hi}")));
        }
        let tau = r1 * c;
        Ok(Self {
            l1: Some(Interval::new(-1.0 / (lo * lo * tau), -1.0 / (hi * hi * tau))?),
            l2: Some(Interval::new(1.0 / (hi * c), 1.0 / (lo * c))?),
            l3: None,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let signs = [(self.l1, -1.0, "l1"), (self.l2, 1.0, "l2"), (self.l3, 1.0, "l3")];
        for (b, sign, name) in signs {
            if let Some(b) = b {
                Interval::new(b.min, b.max)?;
                if !(b.min * sign > 0.0 && b.max * sign > 0.0) {
                    return Err(Error::InvalidParameter(format!(
                        "{name} box [{}, {}] has the wrong sign",
                        b.min, b.max
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn as_array(&self) -> [Option<Interval>; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn contains(&self, l: &LambdaVec) -> bool {
        self.as_array()
            .iter()
            .zip(l.as_array())
            .all(|(b, x)| b.is_none_or(|b| b.contains(x)))
    }
}

/// Componentwise clamp into the configured boxes.
pub fn project_lambda(lambda: &LambdaVec, bounds: &LambdaBounds) -> Result<LambdaVec> {
    bounds.validate()?;
    let mut out = lambda.as_array();
    for (x, b) in out.iter_mut().zip(bounds.as_array()) {
        if let Some(b) = b {
            *x = x.clamp(b.min, b.max);
        }
    }
    Ok(LambdaVec::from_array(out))
}
