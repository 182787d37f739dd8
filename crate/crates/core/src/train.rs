//! Window datasets, Adam, and the training loop that fits the estimator
//! weights and the model parameters together.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::checkpoint::{save_checkpoint, Checkpoint};
use crate::ecm::LambdaVec;
use crate::error::{Error, Result};
use crate::losses::{
    integration_loss, standard_pinn_loss, EcmSystem, Interval, LambdaBounds, LossConfig, LossValue, NetworkEstimator,
    WindowRef,
};
use crate::network::{NetworkParams, NormSpec};
use crate::rng::PortableRng;
use crate::simulate::SimTrace;

/// Every valid window start over one or more traces.
#[derive(Debug, Clone)]
pub struct WindowDataset {
    pub traces: Vec<SimTrace>,
    /// Trace-major, increasing start within a trace.
    pub starts: Vec<WindowRef>,
    pub history: usize,
    pub rollout: usize,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn dt(&self) -> f64 {
        self.traces[0].dt
    }
}

/// Starts `j` with `history <= j` and `j + rollout < len`, giving
/// `len - history - rollout` per trace.
pub fn build_windows(traces: Vec<SimTrace>, history: usize, rollout: usize) -> Result<WindowDataset> {
    if traces.is_empty() {
        return Err(Error::InvalidParameter("no training traces".into()));
    }
    let needed = history + rollout + 1;
    let dt = traces[0].dt;
    let mut starts = Vec::new();
    for (t, tr) in traces.iter().enumerate() {
        if tr.len() < needed {
            return Err(Error::TraceTooShort {
                label: tr.label().to_string(),
                len: tr.len(),
                needed,
            });
        }
        if tr.dt != dt {
            return Err(Error::InvalidParameter(format!(
                "trace `{}` has dt {} but `{}` has {dt}",
                tr.label(),
                tr.dt,
                traces[0].label()
            )));
        }
        starts.extend((history..tr.len() - rollout).map(|j| WindowRef::new(t, j)));
    }
    Ok(WindowDataset {
        traces,
        starts,
        history,
        rollout,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam update.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) {
    assert_eq!(params.len(), grads.len(), "parameter/gradient length mismatch");
    assert_eq!(params.len(), state.m.len(), "parameter/moment length mismatch");
    state.t += 1;
    let t = state.t as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Integration,
    StandardPinn,
}

impl LossKind {
    pub fn name(self) -> &'static str {
        match self {
            LossKind::Integration => "integration",
            LossKind::StandardPinn => "standard_pinn",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub shuffle_seed: u64,
    /// Write a checkpoint every this many epochs (0 = only at the end).
    #[serde(default)]
    pub checkpoint_every: usize,
    /// Set from the loss section of an experiment config.
    #[serde(skip)]
    pub loss: LossKind,
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20_000,
            batch_size: 64,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            shuffle_seed: 1,
            checkpoint_every: 1000,
            loss: LossKind::Integration,
        }
    }
}

/// Per-epoch record: mean batch loss, mean of every loss term, and the
/// identified parameters in physical units after the epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub loss: f64,
    pub r0: f64,
    pub r1: f64,
    pub c: f64,
    pub terms: Vec<f64>,
}

/// Everything that evolves during training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub params: NetworkParams,
    /// `lambda / lambda_init`, starting at 1.
    pub lambda_scaled: [f64; 3],
    pub lambda_init: LambdaVec,
    pub adam: AdamState,
    /// Completed epochs.
    pub epoch: usize,
    pub term_names: Vec<String>,
    pub history: Vec<HistoryRow>,
}

impl TrainState {
    pub fn new(params: NetworkParams, lambda_init: LambdaVec) -> Self {
        let n = params.len() + 3;
        Self {
            params,
            lambda_scaled: [1.0; 3],
            lambda_init,
            adam: AdamState::new(n),
            epoch: 0,
            term_names: Vec::new(),
            history: Vec::new(),
        }
    }

    pub fn lambda(&self) -> LambdaVec {
        let init = self.lambda_init.as_array();
        LambdaVec::from_array([0, 1, 2].map(|i| self.lambda_scaled[i] * init[i]))
    }
}

/// Physical `(R0, R1, C)` from `lambda`, unchecked so diverging values
/// still show up in the history.
pub fn physical(l: &LambdaVec) -> (f64, f64, f64) {
    let c = 1.0 / l.l2;
    (l.l3, -1.0 / (l.l1 * c), c)
}

/// Where and how checkpoints are written.
#[derive(Debug, Clone)]
pub struct CheckpointSink {
    pub path: PathBuf,
    pub config_hash: String,
    pub trajectory_hash: String,
}

impl CheckpointSink {
    fn write(&self, state: &TrainState) -> Result<()> {
        let ck = Checkpoint {
            config_hash: self.config_hash.clone(),
            trajectory_hash: self.trajectory_hash.clone(),
            state: state.clone(),
        };
        save_checkpoint(&ck, &self.path)
    }
}

pub struct Trainer<'a> {
    dataset: &'a WindowDataset,
    system: EcmSystem,
    loss_cfg: LossConfig,
    cfg: TrainConfig,
    norm: NormSpec,
    scaled_bounds: [Option<Interval>; 3],
    tape: Tape,
    pub state: TrainState,
}

impl<'a> Trainer<'a> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dataset: &'a WindowDataset,
        system: EcmSystem,
        loss_cfg: LossConfig,
        cfg: TrainConfig,
        norm: NormSpec,
        bounds: &LambdaBounds,
        state: TrainState,
    ) -> Result<Self> {
        if dataset.is_empty() {
            return Err(Error::InvalidParameter("empty window dataset".into()));
        }
        if cfg.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if loss_cfg.rollout != dataset.rollout {
            return Err(Error::InvalidParameter(format!(
                "loss rollout {} differs from the dataset's {}",
                loss_cfg.rollout, dataset.rollout
            )));
        }
        loss_cfg.validate(&system)?;
        cfg.adam().validate()?;
        norm.validate()?;
        state.lambda_init.validate()?;
        bounds.validate()?;
        if !bounds.contains(&state.lambda()) {
            return Err(Error::InvalidParameter(format!(
                "lambda {:?} lies outside its bounds",
                state.lambda()
            )));
        }
        let n = state.params.len() + 3;
        if state.adam.m.len() != n || state.adam.v.len() != n {
            return Err(Error::InvalidParameter(
                "optimizer state does not match the network".into(),
            ));
        }
        let init = state.lambda_init.as_array();
        let scaled_bounds = [0, 1, 2].map(|i| {
            bounds.as_array()[i].map(|b| {
                let (a, c) = (b.min / init[i], b.max / init[i]);
                Interval {
                    min: a.min(c),
                    max: a.max(c),
                }
            })
        });
        let tape = Tape::new(n);
        Ok(Self {
            dataset,
            system,
            loss_cfg,
            cfg,
            norm,
            scaled_bounds,
            tape,
            state,
        })
    }

    fn loss(&mut self, batch: &[WindowRef]) -> Result<(LossValue, f64)> {
        let np = self.state.params.len();
        let init = self.state.lambda_init.as_array();
        let tape = &mut self.tape;
        let lambda: Vec<Var> = (0..3)
            .map(|i| {
                let p = tape.param(&[self.state.lambda_scaled[i]], 1, 1, np + i);
                tape.scale(p, init[i])
            })
            .collect();
        let est = NetworkEstimator {
            params: &self.state.params,
            history: self.dataset.history,
            norm: self.norm,
            slot: Some(0),
        };
        let f = match self.cfg.loss {
            LossKind::Integration => integration_loss,
            LossKind::StandardPinn => standard_pinn_loss,
        };
        let l = f(
            tape,
            &est,
            &self.system,
            &self.dataset.traces,
            batch,
            &lambda,
            &self.loss_cfg,
        )?;
        let v = tape.scalar(l.total);
        Ok((l, v))
    }

    /// Loss and term values over `batch` at the current point, without
    /// updating anything.
    pub fn evaluate(&mut self, batch: &[WindowRef]) -> Result<(f64, Vec<f64>)> {
        let (l, v) = self.loss(batch)?;
        let terms = l.terms.iter().map(|t| self.tape.scalar(t.value)).collect();
        self.tape.clear();
        Ok((v, terms))
    }

    /// Gradient with respect to `(theta, scaled lambda)` over `batch`.
    pub fn gradient(&mut self, batch: &[WindowRef]) -> Result<(f64, Vec<f64>)> {
        let (l, v) = self.loss(batch)?;
        let g = self.tape.backward(l.total)?;
        Ok((v, g.0))
    }

    fn project(&mut self) {
        for (p, b) in self.state.lambda_scaled.iter_mut().zip(self.scaled_bounds) {
            if let Some(b) = b {
                *p = p.clamp(b.min, b.max);
            }
        }
    }

    /// One shuffled pass over the dataset.
    pub fn run_epoch(&mut self) -> Result<&HistoryRow> {
        let epoch = self.state.epoch;
        let mut order = self.dataset.starts.clone();
        PortableRng::with_stream(self.cfg.shuffle_seed, epoch as u64).shuffle(&mut order);

        let np = self.state.params.len();
        let mut loss_sum = 0.0;
        let mut term_sums: Vec<f64> = Vec::new();
        let mut batches = 0usize;
        let mut flat = vec![0.0; np + 3];
        for (b, batch) in order.chunks(self.cfg.batch_size).enumerate() {
            let (l, v) = self.loss(batch)?;
            if !v.is_finite() {
                self.tape.clear();
                return Err(Error::NonFiniteLoss {
                    epoch: epoch + 1,
                    batch: b,
                });
            }
            if self.state.term_names.is_empty() {
                self.state.term_names = l.terms.iter().map(|t| t.name()).collect();
            }
            term_sums.resize(l.terms.len(), 0.0);
            for (s, t) in term_sums.iter_mut().zip(&l.terms) {
                *s += self.tape.scalar(t.value);
            }
            loss_sum += v;
            batches += 1;
            let g = self.tape.backward(l.total)?;

            flat[..np].copy_from_slice(&self.state.params.data);
            flat[np..].copy_from_slice(&self.state.lambda_scaled);
            adam_step(&mut flat, &g, &mut self.state.adam, &self.cfg.adam());
            self.state.params.data.copy_from_slice(&flat[..np]);
            self.state.lambda_scaled.copy_from_slice(&flat[np..]);
            self.project();
        }
        let (r0, r1, c) = physical(&self.state.lambda());
        let k = batches as f64;
        self.state.epoch += 1;
        self.state.history.push(HistoryRow {
            epoch: self.state.epoch,
            loss: loss_sum / k,
            r0,
            r1,
            c,
            terms: term_sums.iter().map(|s| s / k).collect(),
        });
        Ok(self.state.history.last().expect("just pushed"))
    }

    /// Trains until `cfg.epochs` epochs are complete, writing checkpoints
    /// at the configured interval and at the end (or once, immediately, when
    /// there is nothing left to train). A failed epoch leaves the last
    /// written checkpoint in place.
    pub fn run(&mut self, sink: Option<&CheckpointSink>, mut progress: impl FnMut(&HistoryRow)) -> Result<()> {
        if self.state.epoch == self.cfg.epochs {
            // nothing to train; still leave a checkpoint of the current state
            return sink.map_or(Ok(()), |s| s.write(&self.state));
        }
        while self.state.epoch < self.cfg.epochs {
            let row = self.run_epoch()?;
            progress(row);
            let e = self.state.epoch;
            if let Some(s) = sink {
                let due = self.cfg.checkpoint_every > 0 && e.is_multiple_of(self.cfg.checkpoint_every);
                if due || e == self.cfg.epochs {
                    s.write(&self.state)?;
                }
            }
        }
        Ok(())
    }
}

/// Final network, identified parameters and history.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    pub lambda: LambdaVec,
    pub state: TrainState,
}

/// Trains from scratch (`epochs = 0` returns the inputs unchanged).
#[allow(clippy::too_many_arguments)]
pub fn train(
    dataset: &WindowDataset,
    net_init: NetworkParams,
    lambda_init: LambdaVec,
    system: EcmSystem,
    loss_cfg: LossConfig,
    cfg: TrainConfig,
    norm: NormSpec,
    bounds: &LambdaBounds,
    sink: Option<&CheckpointSink>,
) -> Result<TrainOutcome> {
    let state = TrainState::new(net_init, lambda_init);
    let mut trainer = Trainer::new(dataset, system, loss_cfg, cfg, norm, bounds, state)?;
    trainer.run(sink, |_| {})?;
    let state = trainer.state;
    Ok(TrainOutcome {
        params: state.params.clone(),
        lambda: state.lambda(),
        state,
    })
}

/// History as CSV: `epoch,loss,r0,r1,c` followed by one column per loss
/// term.
pub fn history_csv_string(state: &TrainState, preamble: &[String]) -> String {
    use crate::csvfmt::fmt12;
    let mut out = String::new();
    for line in preamble {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push_str("epoch,loss,r0,r1,c");
    for n in &state.term_names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for r in &state.history {
        out.push_str(&format!(
            "{},{},{},{},{}",
            r.epoch,
            fmt12(r.loss),
            fmt12(r.r0),
            fmt12(r.r1),
            fmt12(r.c)
        ));
        for t in &r.terms {
            out.push(',');
            out.push_str(&fmt12(*t));
        }
        out.push('\n');
    }
    out
}

pub fn export_history_csv(state: &TrainState, path: &Path, preamble: &[String]) -> Result<()> {
    std::fs::write(path, history_csv_string(state, preamble)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::{EcmParams, EcmState, OcvPoly};
    use crate::losses::OracleEstimator;
    use crate::network::{init_weights, NetworkShape};
    use crate::profile::CurrentProfile;
    use crate::simulate::simulate;

    fn trace(len: usize) -> SimTrace {
        let currents: Vec<f64> = (0..len).map(|k| [-3.0, 1.0, -2.5, 0.0, -1.0][(k / 9) % 5]).collect();
        let p = CurrentProfile::new(1.0, currents, "t").unwrap();
        let truth = EcmParams::new(0.06, 0.03, 1000.0, 2.0).unwrap();
        simulate(&truth, &OcvPoly::default(), &p, EcmState::new(0.8, 0.0)).unwrap()
    }

    #[test]
    fn window_counts() {
        assert_eq!(build_windows(vec![trace(3600)], 30, 30).unwrap().len(), 3540);
        let one = build_windows(vec![trace(61)], 30, 30).unwrap();
        assert_eq!(one.starts, vec![WindowRef::new(0, 30)]);
        let e = build_windows(vec![trace(60)], 30, 30).unwrap_err();
        assert!(matches!(
            e,
            Error::TraceTooShort {
                len: 60,
                needed: 61,
                ..
            }
        ));
        let two = build_windows(vec![trace(100), trace(70)], 30, 30).unwrap();
        assert_eq!(two.len(), 40 + 10);
        assert_eq!(two.starts[40], WindowRef::new(1, 30));
    }

    #[test]
    fn adam_zero_gradient_is_noop() {
        let mut p = vec![0.3, -1.2];
        let mut s = AdamState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, &AdamConfig::default());
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(s.t, 1);
    }

    #[test]
    fn adam_first_step_is_sign_like() {
        let mut p = vec![1.0, 1.0, 5.0];
        let mut s = AdamState::new(3);
        adam_step(&mut p, &[0.5, 0.5, -4.0], &mut s, &AdamConfig::default());
        let expected = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p[0] - 1.0 - expected).abs() < 1e-15);
        assert_eq!(p[0], p[1]);
        assert!((p[2] - 5.0 - 1e-3 * 4.0 / (4.0 + 1e-8)).abs() < 1e-15);
        assert!(s.v.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn adam_matches_hand_iteration() {
        // three steps of the textbook recursion written out by hand
        let cfg = AdamConfig::default();
        let gs = [0.2, -0.1, 0.4];
        let mut p = [0.0];
        let mut s = AdamState::new(1);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 0.0f64);
        for (t, g) in gs.iter().enumerate() {
            adam_step(&mut p, &[*g], &mut s, &cfg);
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.999f64.powi(t as i32 + 1));
            x -= 1e-3 * mh / (vh.sqrt() + 1e-8);
        }
        assert!((p[0] - x).abs() < 1e-15, "{} vs {x}", p[0]);
    }

    fn setup(epochs: usize) -> (WindowDataset, TrainConfig, LambdaBounds, LambdaVec) {
        let ds = build_windows(vec![trace(200)], 30, 5).unwrap();
        let cfg = TrainConfig {
            epochs,
            batch_size: 32,
            shuffle_seed: 9,
            checkpoint_every: 0,
            ..TrainConfig::default()
        };
        let bounds = LambdaBounds::from_rc_box(0.03, 1000.0, 0.5, 2.0).unwrap();
        let l0 = EcmParams::new(0.06, 0.03, 1000.0, 2.0)
            .unwrap()
            .scaled(1.5)
            .lambda()
            .unwrap();
        (ds, cfg, bounds, l0)
    }

    fn sys() -> EcmSystem {
        EcmSystem {
            poly: OcvPoly::default(),
            capacity_ah: 2.0,
        }
    }

    fn loss_cfg(n: usize) -> LossConfig {
        LossConfig {
            rollout: n,
            ..LossConfig::default()
        }
    }

    #[test]
    fn zero_epochs_returns_inputs() {
        let (ds, cfg, bounds, l0) = setup(0);
        let net = init_weights(NetworkShape::default(), 2);
        let out = train(
            &ds,
            net.clone(),
            l0,
            sys(),
            loss_cfg(5),
            cfg,
            NormSpec::default(),
            &bounds,
            None,
        )
        .unwrap();
        assert_eq!(out.params, net);
        assert_eq!(out.lambda, l0);
        assert!(out.state.history.is_empty());
    }

    #[test]
    fn short_runs_are_bit_identical_and_stay_in_bounds() {
        let (ds, cfg, bounds, l0) = setup(3);
        let run = || {
            let net = init_weights(NetworkShape::default(), 2);
            train(
                &ds,
                net,
                l0,
                sys(),
                loss_cfg(5),
                cfg.clone(),
                NormSpec::default(),
                &bounds,
                None,
            )
            .unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.state, b.state);
        assert_eq!(a.lambda.l1.to_bits(), b.lambda.l1.to_bits());
        assert!(bounds.contains(&a.lambda));
        assert_eq!(a.state.history.len(), 3);
        assert_eq!(a.state.term_names, vec!["L_g1"]);
        assert!(a.state.history[2].loss < a.state.history[0].loss);
    }

    #[test]
    fn projection_holds_even_with_huge_steps() {
        let (ds, mut cfg, bounds, l0) = setup(2);
        cfg.lr = 5.0;
        let net = init_weights(NetworkShape::default(), 2);
        let out = train(
            &ds,
            net,
            l0,
            sys(),
            loss_cfg(5),
            cfg,
            NormSpec::default(),
            &bounds,
            None,
        );
        match out {
            Ok(o) => assert!(bounds.contains(&o.lambda), "{:?}", o.lambda),
            Err(e) => assert!(matches!(e, Error::NonFiniteLoss { .. })),
        }
    }

    #[test]
    fn baseline_loss_reports_three_terms() {
        let (ds, mut cfg, bounds, l0) = setup(1);
        cfg.loss = LossKind::StandardPinn;
        let net = init_weights(NetworkShape::default(), 2);
        let out = train(
            &ds,
            net,
            l0,
            sys(),
            loss_cfg(5),
            cfg,
            NormSpec::default(),
            &bounds,
            None,
        )
        .unwrap();
        assert_eq!(out.state.term_names, vec!["L_f1", "L_f2", "L_g1"]);
        let row = &out.state.history[0];
        let sum: f64 = row.terms.iter().sum();
        assert!((sum - row.loss).abs() <= 1e-12 * row.loss);
    }

    #[test]
    fn lambda_outside_bounds_is_rejected() {
        let (ds, cfg, bounds, _) = setup(1);
        let l = LambdaVec::new(-1.0, 1e-3, 0.06).unwrap();
        let net = init_weights(NetworkShape::default(), 2);
        assert!(train(&ds, net, l, sys(), loss_cfg(5), cfg, NormSpec::default(), &bounds, None).is_err());
    }

    #[test]
    fn oracle_at_truth_has_no_lambda_gradient() {
        // at the global minimum the loss is flat in lambda, so Adam barely moves
        let ds = build_windows(vec![trace(200)], 30, 30).unwrap();
        let truth = EcmParams::new(0.06, 0.03, 1000.0, 2.0).unwrap().lambda().unwrap();
        let mut tape = Tape::new(3);
        let lam: Vec<Var> = truth
            .as_array()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let p = tape.param(&[1.0], 1, 1, i);
                tape.scale(p, x)
            })
            .collect();
        let l = integration_loss(
            &mut tape,
            &OracleEstimator { history: 30 },
            &sys(),
            &ds.traces,
            &ds.starts[..64],
            &lam,
            &loss_cfg(30),
        )
        .unwrap();
        let g = tape.backward(l.total).unwrap();
        assert!(g.iter().all(|x| x.abs() < 1e-12), "{:?}", g.0);
        let mut p = vec![1.0; 3];
        let mut s = AdamState::new(3);
        let cfg = AdamConfig::default();
        adam_step(&mut p, &g, &mut s, &cfg);
        for x in p {
            assert!((x - 1.0).abs() <= cfg.lr * 1e-3, "{x}");
        }
    }

    #[test]
    fn history_csv_layout() {
        let (ds, cfg, bounds, l0) = setup(2);
        let net = init_weights(NetworkShape::default(), 2);
        let out = train(
            &ds,
            net,
            l0,
            sys(),
            loss_cfg(5),
            cfg,
            NormSpec::default(),
            &bounds,
            None,
        )
        .unwrap();
        let text = history_csv_string(&out.state, &["config_hash=abc".into()]);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# config_hash=abc");
        assert_eq!(lines[1], "epoch,loss,r0,r1,c,L_g1");
        assert!(lines[2].starts_with("1,"));
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn physical_inverts_lambda() {
        let p = EcmParams::new(0.06, 0.03, 1000.0, 2.0).unwrap();
        let (r0, r1, c) = physical(&p.lambda().unwrap());
        assert!((r0 - 0.06).abs() < 1e-15 && (r1 - 0.03).abs() < 1e-15 && (c - 1000.0).abs() < 1e-9);
    }
}
