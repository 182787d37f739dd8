//! Windowed recurrent state estimator.
//!
//! An Elman layer runs over the `ell + 1` most recent normalized
//! `(current, voltage)` pairs starting from a zero hidden state; its final
//! hidden state feeds a ReLU layer and a linear head that emits one value
//! per ODE state. The recurrent state is never carried between windows.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Tape, Var};
use crate::error::{Error, Result};
use crate::rng::PortableRng;
use crate::simulate::SimTrace;

pub const DEFAULT_HISTORY: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkShape {
    pub inputs: usize,
    pub recurrent: usize,
    pub hidden: usize,
    pub outputs: usize,
}

impl Default for NetworkShape {
    fn default() -> Self {
        Self {
            inputs: 2,
            recurrent: 20,
            hidden: 200,
            outputs: 2,
        }
    }
}

/// Offsets of each tensor in the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Layout {
    wx: usize,
    wh: usize,
    bh: usize,
    wfc: usize,
    bfc: usize,
    wout: usize,
    bout: usize,
    total: usize,
}

impl NetworkShape {
    fn layout(&self) -> Layout {
        let (i, r, h, o) = (self.inputs, self.recurrent, self.hidden, self.outputs);
        let wx = 0;
        let wh = wx + r * i;
        let bh = wh + r * r;
        let wfc = bh + r;
        let bfc = wfc + h * r;
        let wout = bfc + h;
        let bout = wout + o * h;
        Layout {
            wx,
            wh,
            bh,
            wfc,
            bfc,
            wout,
            bout,
            total: bout + o,
        }
    }

    /// Number of trainable scalars.
    pub fn param_count(&self) -> usize {
        self.layout().total
    }
}

/// All weights and biases, flattened in the order
/// `W_x (r x i), W_h (r x r), b_h, W_fc (h x r), b_fc, W_out (o x h), b_out`,
/// each matrix row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub shape: NetworkShape,
    pub data: Vec<f64>,
}

macro_rules! view {
    ($name:ident, $start:ident, $end:ident) => {
        pub fn $name(&self) -> &[f64] {
            let l = self.shape.layout();
            &self.data[l.$start..l.$end]
        }
    };
}

impl NetworkParams {
    pub fn zeros(shape: NetworkShape) -> Self {
        Self {
            shape,
            data: vec![0.0; shape.param_count()],
        }
    }

    pub fn from_flat(shape: NetworkShape, data: Vec<f64>) -> Result<Self> {
        if data.len() != shape.param_count() {
            return Err(Error::InvalidParameter(format!(
                "network needs {} parameters, got {}",
                shape.param_count(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    view!(wx, wx, wh);
    view!(wh, wh, bh);
    view!(bh, bh, wfc);
    view!(wfc, wfc, bfc);
    view!(bfc, bfc, wout);
    view!(wout, wout, bout);
    view!(bout, bout, total);
}

/// Glorot-uniform weights, zero biases.
pub fn init_weights(shape: NetworkShape, seed: u64) -> NetworkParams {
    let mut rng = PortableRng::new(seed);
    let mut p = NetworkParams::zeros(shape);
    let l = shape.layout();
    let (i, r, h, o) = (shape.inputs, shape.recurrent, shape.hidden, shape.outputs);
    for (start, fan_out, fan_in) in [(l.wx, r, i), (l.wh, r, r), (l.wfc, h, r), (l.wout, o, h)] {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for w in &mut p.data[start..start + fan_in * fan_out] {
            *w = rng.uniform_range(-bound, bound);
        }
    }
    p
}

/// Input scaling. Defaults suit a 2 Ah cell: 2C current scale and a
/// 2.5 V to 4.2 V voltage window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NormSpec {
    pub i_scale: f64,
    pub v_low: f64,
    pub v_high: f64,
}

impl Default for NormSpec {
    fn default() -> Self {
        Self {
            i_scale: 4.0,
            v_low: 2.5,
            v_high: 4.2,
        }
    }
}

impl NormSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.i_scale > 0.0 && self.i_scale.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "i_scale must be positive, got {}",
                self.i_scale
            )));
        }
        if !(self.v_low < self.v_high && self.v_low.is_finite() && self.v_high.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "need v_low < v_high, got {} and {}",
                self.v_low, self.v_high
            )));
        }
        Ok(())
    }

    #[inline]
    fn apply(&self, current: f64, voltage: f64) -> [f64; 2] {
        [
            current / self.i_scale,
            (voltage - self.v_low) / (self.v_high - self.v_low),
        ]
    }
}

pub fn normalize_inputs(current: f64, voltage: f64, norm: &NormSpec) -> Result<[f64; 2]> {
    norm.validate()?;
    Ok(norm.apply(current, voltage))
}

/// `ell + 1` normalized `(current, voltage)` pairs, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowInput {
    pub steps: Vec<[f64; 2]>,
}

impl WindowInput {
    /// Window ending at sample `end` (inclusive).
    pub fn from_trace(trace: &SimTrace, end: usize, history: usize, norm: &NormSpec) -> Result<Self> {
        if end < history || end >= trace.len() {
            return Err(Error::InvalidWindow {
                start: end,
                reason: format!(
                    "needs samples {}..={end} within a trace of length {}",
                    end as isize - history as isize,
                    trace.len()
                ),
            });
        }
        let steps = (end - history..=end)
            .map(|k| norm.apply(trace.currents[k], trace.voltages[k]))
            .collect();
        Ok(Self { steps })
    }
}

/// Plain forward pass for one window; returns one value per state.
pub fn forward(params: &NetworkParams, window: &WindowInput, history: usize) -> Result<Vec<f64>> {
    if window.steps.len() != history + 1 {
        return Err(Error::InvalidParameter(format!(
            "window has {} steps, expected {}",
            window.steps.len(),
            history + 1
        )));
    }
    let s = params.shape;
    let (r, hd, o) = (s.recurrent, s.hidden, s.outputs);
    assert_eq!(s.inputs, 2, "window inputs are (current, voltage) pairs");
    let (wx, wh, bh) = (params.wx(), params.wh(), params.bh());
    let mut h = vec![0.0; r];
    let mut next = vec![0.0; r];
    for x in &window.steps {
        for i in 0..r {
            let mut acc = bh[i] + wx[2 * i] * x[0] + wx[2 * i + 1] * x[1];
            for (w, hv) in wh[i * r..(i + 1) * r].iter().zip(&h) {
                acc += w * hv;
            }
            next[i] = acc.tanh();
        }
        std::mem::swap(&mut h, &mut next);
    }
    let (wfc, bfc) = (params.wfc(), params.bfc());
    let a: Vec<f64> = (0..hd)
        .map(|i| {
            let z = bfc[i] + wfc[i * r..(i + 1) * r].iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
            z.max(0.0)
        })
        .collect();
    let (wout, bout) = (params.wout(), params.bout());
    Ok((0..o)
        .map(|i| {
            bout[i]
                + wout[i * hd..(i + 1) * hd]
                    .iter()
                    .zip(&a)
                    .map(|(w, x)| w * x)
                    .sum::<f64>()
        })
        .collect())
}

/// Network tensors placed on a tape.
#[derive(Debug, Clone, Copy)]
pub struct NetworkVars {
    pub wx: Var,
    pub wh: Var,
    pub bh: Var,
    pub wfc: Var,
    pub bfc: Var,
    pub wout: Var,
    pub bout: Var,
}

/// Records the parameters as trainable leaves starting at gradient slot
/// `slot`, or as constants when `slot` is `None`.
pub fn place_on_tape(tape: &mut Tape, params: &NetworkParams, slot: Option<usize>) -> NetworkVars {
    let s = params.shape;
    let l = s.layout();
    let (i, r, h, o) = (s.inputs, s.recurrent, s.hidden, s.outputs);
    let mut put = |start: usize, rows: usize, cols: usize| {
        let data = &params.data[start..start + rows * cols];
        match slot {
            Some(base) => tape.param(data, rows, cols, base + start),
            None => tape.constant(data, rows, cols),
        }
    };
    NetworkVars {
        wx: put(l.wx, r, i),
        wh: put(l.wh, r, r),
        bh: put(l.bh, 1, r),
        wfc: put(l.wfc, h, r),
        bfc: put(l.bfc, 1, h),
        wout: put(l.wout, o, h),
        bout: put(l.bout, 1, o),
    }
}

/// Batched forward pass on the tape. Row `b` of the result is the
/// estimate for the window ending at `ends[b]` of `traces[ends[b].0]`.
/// Returns a `batch x outputs` node.
pub fn forward_on_tape(
    tape: &mut Tape,
    vars: &NetworkVars,
    shape: NetworkShape,
    traces: &[SimTrace],
    ends: &[(usize, usize)],
    history: usize,
    norm: &NormSpec,
) -> Result<Var> {
    let batch = ends.len();
    for &(t, end) in ends {
        let len = traces.get(t).map_or(0, SimTrace::len);
        if end < history || end >= len {
            return Err(Error::InvalidWindow {
                start: end,
                reason: format!("needs {history} samples of history inside a trace of length {len}"),
            });
        }
    }
    let mut h: Option<Var> = None;
    for step in 0..=history {
        let x = tape.constant_with(batch, shape.inputs, |buf| {
            for (row, &(t, end)) in ends.iter().enumerate() {
                let k = end - history + step;
                let tr = &traces[t];
                let v = norm.apply(tr.currents[k], tr.voltages[k]);
                buf[2 * row] = v[0];
                buf[2 * row + 1] = v[1];
            }
        });
        h = Some(match h {
            None => tape.dense(x, vars.wx, Some(vars.bh), Activation::Tanh),
            Some(prev) => tape.dense2(x, vars.wx, prev, vars.wh, Some(vars.bh), Activation::Tanh),
        });
    }
    let h = h.expect("history + 1 >= 1 steps");
    let a = tape.dense(h, vars.wfc, Some(vars.bfc), Activation::Relu);
    Ok(tape.dense(a, vars.wout, Some(vars.bout), Activation::Identity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::{EcmParams, EcmState, OcvPoly};
    use crate::profile::CurrentProfile;
    use crate::simulate::simulate;

    fn trace() -> SimTrace {
        let currents: Vec<f64> = (0..120).map(|k| ((k * 13) % 7) as f64 - 3.5).collect();
        let p = CurrentProfile::new(1.0, currents, "t").unwrap();
        simulate(
            &EcmParams::new(0.06, 0.03, 1000.0, 2.0).unwrap(),
            &OcvPoly::default(),
            &p,
            EcmState::new(0.6, 0.0),
        )
        .unwrap()
    }

    #[test]
    fn default_parameter_count_matches_layer_shapes() {
        let by_layer = 20 * 2 + 20 * 20 + 20 + 200 * 20 + 200 + 2 * 200 + 2;
        assert_eq!(by_layer, 5062);
        assert_eq!(NetworkShape::default().param_count(), by_layer);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = NetworkShape::default();
        let a = init_weights(s, 9);
        assert_eq!(a, init_weights(s, 9));
        assert_ne!(a, init_weights(s, 10));
        assert!(a.bh().iter().chain(a.bfc()).chain(a.bout()).all(|&b| b == 0.0));
        let bound = (6.0f64 / 22.0).sqrt();
        assert!(a.wx().iter().all(|w| w.abs() <= bound));
        assert!(a.wx().iter().any(|w| w.abs() > 0.5 * bound));
    }

    #[test]
    fn normalization_defaults() {
        let n = NormSpec::default();
        assert_eq!(normalize_inputs(4.0, 3.0, &n).unwrap()[0], 1.0);
        assert_eq!(normalize_inputs(0.0, 4.2, &n).unwrap()[1], 1.0);
        assert_eq!(normalize_inputs(0.0, 2.5, &n).unwrap()[1], 0.0);
        let bad = NormSpec {
            v_low: 4.0,
            v_high: 3.0,
            ..n
        };
        assert!(normalize_inputs(0.0, 3.0, &bad).is_err());
    }

    #[test]
    fn zero_network_outputs_zero() {
        let p = NetworkParams::zeros(NetworkShape::default());
        let w = WindowInput::from_trace(&trace(), 50, 30, &NormSpec::default()).unwrap();
        assert_eq!(forward(&p, &w, 30).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn wrong_window_length_rejected() {
        let p = init_weights(NetworkShape::default(), 1);
        let w = WindowInput::from_trace(&trace(), 50, 10, &NormSpec::default()).unwrap();
        assert!(forward(&p, &w, 30).is_err());
        assert!(WindowInput::from_trace(&trace(), 5, 10, &NormSpec::default()).is_err());
    }

    #[test]
    fn tape_forward_matches_plain_forward() {
        let p = init_weights(NetworkShape::default(), 4);
        let tr = vec![trace()];
        let ends: Vec<(usize, usize)> = vec![(0, 30), (0, 77), (0, 119), (0, 45)];
        let norm = NormSpec::default();
        let mut tape = Tape::new(0);
        let vars = place_on_tape(&mut tape, &p, None);
        let out = forward_on_tape(&mut tape, &vars, p.shape, &tr, &ends, 30, &norm).unwrap();
        let vals = tape.value(out).to_vec();
        for (row, &(_, end)) in ends.iter().enumerate() {
            let w = WindowInput::from_trace(&tr[0], end, 30, &norm).unwrap();
            let y = forward(&p, &w, 30).unwrap();
            for c in 0..2 {
                assert!((vals[row * 2 + c] - y[c]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn windows_are_independent_of_evaluation_order() {
        let p = init_weights(NetworkShape::default(), 4);
        let tr = vec![trace()];
        let norm = NormSpec::default();
        let run = |ends: &[(usize, usize)]| {
            let mut tape = Tape::new(0);
            let vars = place_on_tape(&mut tape, &p, None);
            let out = forward_on_tape(&mut tape, &vars, p.shape, &tr, ends, 30, &norm).unwrap();
            tape.value(out).chunks(2).map(|c| (c[0], c[1])).collect::<Vec<_>>()
        };
        let a = run(&[(0, 30), (0, 60), (0, 90)]);
        let b = run(&[(0, 90), (0, 30), (0, 60)]);
        assert_eq!(a[0], b[1]);
        assert_eq!(a[1], b[2]);
        assert_eq!(a[2], b[0]);
    }

    #[test]
    fn forward_is_reproducible() {
        let p = init_weights(NetworkShape::default(), 12);
        let w = WindowInput::from_trace(&trace(), 80, 30, &NormSpec::default()).unwrap();
        let a = forward(&p, &w, 30).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, forward(&p, &w, 30).unwrap());
    }
}
