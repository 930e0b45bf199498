//! Szász–Mirakyan estimation of multivariate distribution functions on
//! `[0, ∞)^d`, with cross-validated smoothing, asymptotic theory and a
//! Monte Carlo harness.

pub mod cli;
pub mod error;
pub mod estimators;
pub mod lscv;
pub mod models;
pub mod simharness;
pub mod specialfn;
pub mod theory;
pub mod validation;

pub use error::{Error, Result};
pub use estimators::{empirical_cdf, loo_estimate, sm_estimate, sm_weight, Sample, SmEstimator, SmoothingVector};
pub use models::{DistributionModel, ModelKind};
