//! Central-difference check of every trainable scalar for both losses.

use crate::autodiff::{Tape, Var};
use crate::ecm::{EcmParams, EcmState, LambdaVec, OcvPoly};
use crate::losses::{integration_loss, standard_pinn_loss, EcmSystem, LossConfig, NetworkEstimator, WindowRef};
use crate::network::{init_weights, NetworkParams, NetworkShape, NormSpec};
use crate::profile::{synth_dynamic_profile, SynthSpec};
use crate::simulate::{simulate, SimTrace};

type LossFn = fn(
    &mut Tape,
    &dyn crate::losses::StateEstimator,
    &dyn crate::losses::OdeSystem,
    &[SimTrace],
    &[WindowRef],
    &[Var],
    &LossConfig,
) -> crate::Result<crate::losses::LossValue>;

fn trace() -> SimTrace {
    let spec = SynthSpec::new(11, 200.0, 1.0, 2.0, 2.0, 20.0);
    let p = synth_dynamic_profile(&spec).unwrap();
    let truth = EcmParams::new(0.06, 0.03, 1000.0, 2.0).unwrap();
    simulate(&truth, &OcvPoly::default(), &p, EcmState::new(0.8, 0.0)).unwrap()
}

struct Problem {
    traces: Vec<SimTrace>,
    batch: Vec<WindowRef>,
    cfg: LossConfig,
    system: EcmSystem,
    loss: LossFn,
}

impl Problem {
    /// Loss value and (optionally) its gradient at flat point `theta ++ lambda`.
    fn eval(&self, shape: NetworkShape, point: &[f64], grad: bool) -> (f64, Option<Vec<f64>>) {
        let np = shape.param_count();
        let params = NetworkParams::from_flat(shape, point[..np].to_vec()).unwrap();
        let est = NetworkEstimator {
            params: &params,
            history: 30,
            norm: NormSpec::default(),
            slot: Some(0),
        };
        let mut tape = Tape::new(np + 3);
        let lam: Vec<Var> = (0..3).map(|i| tape.param(&[point[np + i]], 1, 1, np + i)).collect();
        let l = (self.loss)(
            &mut tape,
            &est,
            &self.system,
            &self.traces,
            &self.batch,
            &lam,
            &self.cfg,
        )
        .unwrap();
        let v = tape.scalar(l.total);
        let g = grad.then(|| tape.backward(l.total).unwrap().0);
        (v, g)
    }

    fn check(&self, seed: u64) {
        let shape = NetworkShape::default();
        let mut point = init_weights(shape, seed).data;
        // lambda at 150% of truth, as at the start of training
        let l0 = LambdaVec::new(-1.0 / 30.0 / 2.25, 1.0 / 1500.0, 0.09).unwrap();
        point.extend(l0.as_array());
        let (_, g) = self.eval(shape, &point, true);
        let g = g.unwrap();
        assert_eq!(g.len(), point.len());
        let h = 1e-6;
        let mut worst = (0.0f64, 0usize);
        for i in 0..point.len() {
            let mut p = point.clone();
            p[i] = point[i] + h;
            let (up, _) = self.eval(shape, &p, false);
            p[i] = point[i] - h;
            let (down, _) = self.eval(shape, &p, false);
            let fd = (up - down) / (2.0 * h);
            let err = (g[i] - fd).abs();
            let tol = (1e-6 * fd.abs().max(g[i].abs())).max(1e-9);
            assert!(err <= tol, "param {i}: tape {} vs fd {fd}", g[i]);
            let rel = err / fd.abs().max(1e-300);
            if fd.abs() > 1e-6 && rel > worst.0 {
                worst = (rel, i);
            }
        }
        eprintln!("worst relative error {:.3e} at {}", worst.0, worst.1);
    }
}

#[test]
fn integration_loss_gradient_matches_finite_differences() {
    Problem {
        traces: vec![trace()],
        batch: vec![WindowRef::new(0, 40), WindowRef::new(0, 120)],
        cfg: LossConfig {
            rollout: 2,
            ..LossConfig::default()
        },
        system: EcmSystem {
            poly: OcvPoly::default(),
            capacity_ah: 2.0,
        },
        loss: integration_loss,
    }
    .check(7);
}

#[test]
fn standard_pinn_loss_gradient_matches_finite_differences() {
    Problem {
        traces: vec![trace()],
        batch: vec![WindowRef::new(0, 33), WindowRef::new(0, 150)],
        cfg: LossConfig::default(),
        system: EcmSystem {
            poly: OcvPoly::default(),
            capacity_ah: 2.0,
        },
        loss: standard_pinn_loss,
    }
    .check(8);
}
