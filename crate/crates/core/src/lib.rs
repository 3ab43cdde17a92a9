//! Estimation and ranking of average treatment effects for several binary
//! treatments over discrete covariate strata.
//!
//! The crate pairs each estimator with closed-form oracles so that its target
//! can be checked directly:
//!
//! * [`dgp`]: stratified data-generating processes, oracle ATE / WATE /
//!   `Cov(tau, gamma)` and a seeded sampler.
//! * [`nuisance`]: fold assignment and cross-fitted outcome and propensity
//!   regressions.
//! * [`estimators`]: PLM (residual-on-residual), AIPW and IPW.
//! * [`diagnostics`]: WATE decomposition, rank-reversal checks, rankings.
//! * [`montecarlo`]: scenario presets and a deterministic parallel
//!   replication engine.
//! * [`config`]: the TOML format for DGP and scenario files.

pub mod config;
pub mod dgp;
pub mod diagnostics;
pub mod error;
pub mod estimators;
mod linalg;
pub mod montecarlo;
pub mod nuisance;
pub mod rng;

pub use error::{Error, Result};
