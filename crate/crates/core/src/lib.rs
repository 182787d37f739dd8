//! Physics-informed state estimation with an integration-embedded loss.
//!
//! A recurrent network maps a short history of measured inputs and outputs
//! to the current hidden state of an ODE system. Instead of penalizing the
//! residual of every differential equation separately, the predicted state
//! is rolled forward with a Runge-Kutta integrator through the known
//! dynamics, mapped to predicted outputs, and compared with the measured
//! outputs. The model parameters ride along in the same reverse-mode pass,
//! so state estimation and parameter identification happen together.
//!
//! The bundled application is a first-order equivalent-circuit battery
//! model (state of charge and RC voltage hidden, terminal voltage measured).

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod csvfmt;
pub mod ecm;
pub mod error;
pub mod eval;
pub mod experiment;
#[cfg(test)]
mod fd_gradients;
pub mod losses;
pub mod network;
pub mod profile;
pub mod rng;
pub mod simulate;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
