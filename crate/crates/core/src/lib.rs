//! Fully modified estimation and cointegration testing for seemingly
//! unrelated cointegrating polynomial regressions (SUCPR).
//!
//! The system is `y_t = Z_t' β + u_t`, where each of the `n` equations
//! carries its own intercept, polynomial time trend and integer powers of an
//! I(1) regressor. The crate provides
//!
//! * [`model`]: regressor construction, scaling matrices and bias vectors,
//! * [`biam`]: the banded inverse autocovariance matrix built from a ladder of
//!   least-squares VAR fits (modified Cholesky block decomposition),
//! * [`lrcov`]: kernel and VAR-based long-run covariance estimators,
//! * [`estimators`]: OLS, FM-SOLS, FM-SUR and FM-GLS (plus infeasible
//!   variants with supplied covariances),
//! * [`inference`]: Wald tests, subsampling KPSS tests, and the limit CDF of
//!   `∫‖W‖²`,
//! * [`montecarlo`]: data generating processes and a deterministic
//!   experiment runner.

pub mod biam;
pub mod error;
pub mod estimators;
pub mod inference;
pub(crate) mod linalg;
pub mod lrcov;
pub mod model;
pub mod montecarlo;

pub use error::{Error, Result};
