//! Finite-size security routines for continuous-variable measurement-device-independent
//! QKD with Gaussian-modulated coherent states and heterodyne detection.
//!
//! * [`gaussian`]: covariance conventions, Gaussian states, channels and conditioning.
//! * [`tail_bounds`]: chi-square style concentration bounds and their Monte Carlo check.
//! * [`protocol`]: seeded simulation of the protocol in the entanglement-based and
//!   prepare-and-measure pictures, Haar symmetrization and the record file format.
//! * [`energy_test`]: the sacrifice-based energy test and the full-data test.
//! * [`estimation`]: covariance-matrix bounds, including local parameter estimation
//!   that never reveals raw key material.
//! * [`keyrate`]: asymptotic and finite-size key rates.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimation;
pub mod gaussian;
pub mod keyrate;
pub mod protocol;
pub mod rng;
pub mod tail_bounds;

pub use error::{Error, Result};
