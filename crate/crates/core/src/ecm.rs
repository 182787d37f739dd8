//! First-order equivalent-circuit battery model.
//!
//! States are the state of charge `z` and the RC-pair voltage `vc`; the
//! input is the cell current (positive = charging) and the output is the
//! terminal voltage:
//!
//! ```text
//! dz/dt  = I / (3600 Q)
//! dvc/dt = l1 vc + l2 I            l1 = -1/(R1 C), l2 = 1/C
//! V      = OCV(z) + vc + l3 I      l3 = R0
//! ```
//!
//! The dynamics are linear in `(l1, l2, l3)`, which is why identification
//! works on that vector rather than on `(R0, R1, C)` directly.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical cell parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EcmParams {
    /// Ohmic resistance (ohm).
    pub r0: f64,
    /// RC-pair resistance (ohm).
    pub r1: f64,
    /// RC-pair capacitance (farad).
    pub c: f64,
    /// Capacity (ampere-hour).
    pub q: f64,
}

impl EcmParams {
    pub fn new(r0: f64, r1: f64, c: f64, q: f64) -> Result<Self> {
        let p = Self { r0, r1, c, q };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("r0", self.r0), ("r1", self.r1), ("c", self.c), ("q", self.q)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// Every resistive/capacitive parameter multiplied by `factor`; capacity kept.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            r0: self.r0 * factor,
            r1: self.r1 * factor,
            c: self.c * factor,
            q: self.q,
        }
    }

    pub fn lambda(&self) -> Result<LambdaVec> {
        lambda_from_params(self)
    }
}

/// Linear reparameterization of the identified parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaVec {
    /// `-1/(R1 C)` (1/s, negative).
    pub l1: f64,
    /// `1/C` (1/F, positive).
    pub l2: f64,
    /// `R0` (ohm, positive).
    pub l3: f64,
}

impl LambdaVec {
    pub fn new(l1: f64, l2: f64, l3: f64) -> Result<Self> {
        let l = Self { l1, l2, l3 };
        l.validate()?;
        Ok(l)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.l1.is_finite() && self.l1 < 0.0) {
            return Err(Error::InvalidParameter(format!("l1 must be negative, got {}", self.l1)));
        }
        if !(self.l2.is_finite() && self.l2 > 0.0) {
            return Err(Error::InvalidParameter(format!("l2 must be positive, got {}", self.l2)));
        }
        if !(self.l3.is_finite() && self.l3 > 0.0) {
            return Err(Error::InvalidParameter(format!("l3 must be positive, got {}", self.l3)));
        }
        Ok(())
    }

    pub fn as_array(&self) -> [f64; 3] {
        [self.l1, self.l2, self.l3]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Self {
            l1: a[0],
            l2: a[1],
            l3: a[2],
        }
    }
}

pub fn lambda_from_params(p: &EcmParams) -> Result<LambdaVec> {
    p.validate()?;
    Ok(LambdaVec {
        l1: -1.0 / (p.r1 * p.c),
        l2: 1.0 / p.c,
        l3: p.r0,
    })
}

/// Inverse of [`lambda_from_params`]; `q` is carried alongside since it is
/// not part of the identified vector.
pub fn params_from_lambda(l: &LambdaVec, q: f64) -> Result<EcmParams> {
    l.validate()?;
    let c = 1.0 / l.l2;
    // R1 = -1/(l1 C) = -l2/l1
    let r1 = -l.l2 / l.l1;
    EcmParams::new(l.l3, r1, c, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EcmState {
    pub z: f64,
    pub vc: f64,
}

impl EcmState {
    pub fn new(z: f64, vc: f64) -> Self {
        Self { z, vc }
    }
}

/// Degree-7 open-circuit-voltage polynomial in the state of charge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OcvPoly {
    pub coeffs: [f64; 8],
}

/// Fit for a 2.0 Ah 18650 cell, `a0` first.
pub const DEFAULT_OCV_COEFFS: [f64; 8] = [
    3.039475779,
    9.620312047,
    -77.31237098,
    327.4461809,
    -763.3324119,
    988.4086711,
    -662.9843922,
    179.3018624,
];

impl Default for OcvPoly {
    fn default() -> Self {
        Self {
            coeffs: DEFAULT_OCV_COEFFS,
        }
    }
}

impl OcvPoly {
    pub fn new(coeffs: [f64; 8]) -> Self {
        Self { coeffs }
    }

    /// Reads one coefficient per line, `a0` first. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn from_text(text: &str, source_name: &str) -> Result<Self> {
        let mut coeffs = Vec::with_capacity(8);
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line.parse().map_err(|_| Error::Parse {
                source_name: source_name.to_string(),
                line: i + 1,
                message: format!("not a number: `{line}`"),
            })?;
            coeffs.push(v);
        }
        let coeffs: [f64; 8] = coeffs.try_into().map_err(|v: Vec<f64>| Error::Parse {
            source_name: source_name.to_string(),
            line: text.lines().count(),
            message: format!("expected 8 coefficients, found {}", v.len()),
        })?;
        Ok(Self { coeffs })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, &path.display().to_string())
    }

    /// Horner evaluation of `sum a_m z^m`.
    pub fn ocv(&self, z: f64) -> f64 {
        self.coeffs.iter().rev().fold(0.0, |acc, &a| acc * z + a)
    }

    /// `sum m a_m z^(m-1)`.
    pub fn ocv_slope(&self, z: f64) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .skip(1)
            .rev()
            .fold(0.0, |acc, (m, &a)| acc * z + m as f64 * a)
    }
}

pub fn ocv(poly: &OcvPoly, z: f64) -> f64 {
    poly.ocv(z)
}

pub fn ocv_slope(poly: &OcvPoly, z: f64) -> f64 {
    poly.ocv_slope(z)
}

/// `(dz/dt, dvc/dt)` for the given state and current.
pub fn f_dynamics(state: &EcmState, current: f64, lambda: &LambdaVec, q: f64) -> EcmState {
    EcmState {
        z: current / (3600.0 * q),
        vc: lambda.l1 * state.vc + lambda.l2 * current,
    }
}

/// Terminal voltage.
pub fn g_output(state: &EcmState, current: f64, lambda: &LambdaVec, poly: &OcvPoly) -> f64 {
    poly.ocv(state.z) + state.vc + lambda.l3 * current
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn truth() -> EcmParams {
        EcmParams::new(0.06, 0.03, 1000.0, 2.0).unwrap()
    }

    #[test]
    fn ocv_at_zero_is_a0() {
        assert_eq!(ocv(&OcvPoly::default(), 0.0), 3.039475779);
    }

    #[test]
    fn ocv_at_one_is_coefficient_sum() {
        // Independent summation in exact decimal: 4.187327146
        let sum: f64 = DEFAULT_OCV_COEFFS.iter().sum();
        assert!((ocv(&OcvPoly::default(), 1.0) - 4.187327146).abs() < 1e-9);
        assert!((ocv(&OcvPoly::default(), 1.0) - sum).abs() < 1e-9);
    }

    #[test]
    fn constant_poly() {
        let p = OcvPoly::new([5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(p.ocv(0.37), 5.0);
        assert_eq!(p.ocv_slope(0.37), 0.0);
        assert_eq!(p.ocv_slope(-3.0), 0.0);
    }

    #[test]
    fn slope_at_zero_is_a1() {
        assert_eq!(ocv_slope(&OcvPoly::default(), 0.0), 9.620312047);
    }

    /// Central difference of `ocv` with both evaluations done in exact
    /// rational arithmetic, so only the O(h^2) truncation error remains.
    fn exact_central_difference(poly: &OcvPoly, z: f64, h: f64) -> f64 {
        use num::{BigRational, ToPrimitive};
        let eval = |x: f64| {
            let x = BigRational::from_float(x).unwrap();
            poly.coeffs
                .iter()
                .rev()
                .fold(BigRational::from_float(0.0).unwrap(), |acc, &a| {
                    acc * &x + BigRational::from_float(a).unwrap()
                })
        };
        let (up, dn) = (z + h, z - h);
        let diff = eval(up) - eval(dn);
        (diff / BigRational::from_float(up - dn).unwrap()).to_f64().unwrap()
    }

    #[test]
    fn slope_matches_central_differences() {
        let p = OcvPoly::default();
        for k in 1..=9 {
            let z = k as f64 / 10.0;
            let fd = exact_central_difference(&p, z, 1e-6);
            let an = p.ocv_slope(z);
            assert!(((fd - an) / an).abs() < 1e-8, "z={z}: fd {fd} vs {an}");
        }
    }

    #[test]
    fn dynamics_examples() {
        let lam = truth().lambda().unwrap();
        let d = f_dynamics(&EcmState::new(0.8, 0.0), 0.0, &lam, 2.0);
        assert_eq!(d, EcmState::new(0.0, 0.0));

        let d = f_dynamics(&EcmState::new(0.5, 0.0), -2.0, &lam, 2.0);
        assert_eq!(d.z, -2.0 / 7200.0);

        let d = f_dynamics(&EcmState::new(0.5, -0.06), -2.0, &lam, 2.0);
        assert!(d.vc.abs() < 1e-15);
    }

    #[test]
    fn output_examples() {
        let poly = OcvPoly::default();
        let lam = truth().lambda().unwrap();
        assert_eq!(g_output(&EcmState::new(0.0, 0.0), 0.0, &lam, &poly), 3.039475779);
        let v = g_output(&EcmState::new(0.0, 0.01), -2.0, &lam, &poly);
        assert!((v - 2.929475779).abs() < 1e-12);
        assert_eq!(g_output(&EcmState::new(0.42, 0.0), 0.0, &lam, &poly), poly.ocv(0.42));
    }

    #[test]
    fn lambda_of_true_params() {
        let lam = truth().lambda().unwrap();
        assert!((lam.l1 + 1.0 / 30.0).abs() < 1e-15);
        assert!((lam.l2 - 1e-3).abs() < 1e-18);
        assert_eq!(lam.l3, 0.06);
    }

    #[test]
    fn unphysical_lambda_rejected() {
        assert!(params_from_lambda(
            &LambdaVec {
                l1: 0.01,
                l2: 1e-3,
                l3: 0.06
            },
            2.0
        )
        .is_err());
        assert!(params_from_lambda(
            &LambdaVec {
                l1: -0.01,
                l2: 0.0,
                l3: 0.06
            },
            2.0
        )
        .is_err());
        assert!(params_from_lambda(
            &LambdaVec {
                l1: -0.01,
                l2: 1e-3,
                l3: -1.0
            },
            2.0
        )
        .is_err());
        assert!(EcmParams::new(0.0, 0.03, 1000.0, 2.0).is_err());
    }

    #[test]
    fn ocv_text_parsing() {
        let p = OcvPoly::from_text("# coeffs\n1\n2\n3\n4\n5\n6\n7\n8\n", "t").unwrap();
        assert_eq!(p.coeffs, [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        assert!(OcvPoly::from_text("1\n2\n", "t").is_err());
        assert!(matches!(
            OcvPoly::from_text("1\nx\n", "t"),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn lambda_round_trip(r0 in 1e-3f64..1.0, r1 in 1e-3f64..1.0, c in 1.0f64..1e5, q in 0.1f64..100.0) {
            let p = EcmParams::new(r0, r1, c, q).unwrap();
            let back = params_from_lambda(&lambda_from_params(&p).unwrap(), q).unwrap();
            for (a, b) in [(p.r0, back.r0), (p.r1, back.r1), (p.c, back.c), (p.q, back.q)] {
                prop_assert!(((a - b) / a).abs() < 1e-12);
            }
        }

        #[test]
        fn dynamics_homogeneous(alpha in -10.0f64..10.0, z in -1.0f64..2.0, vc in -1.0f64..1.0, i in -10.0f64..10.0) {
            let lam = truth().lambda().unwrap();
            let base = f_dynamics(&EcmState::new(z, vc), i, &lam, 2.0);
            let scaled = f_dynamics(&EcmState::new(alpha * z, alpha * vc), alpha * i, &lam, 2.0);
            prop_assert!((scaled.z - alpha * base.z).abs() <= 1e-12 * (1.0 + base.z.abs() * alpha.abs()));
            prop_assert!((scaled.vc - alpha * base.vc).abs() <= 1e-12 * (1.0 + base.vc.abs() * alpha.abs()));
        }
    }
}
