//! Life-cycle value-of-information analysis for a vibration-monitored two-span bridge.
//!
//! The crate models the full chain from synthetic monitoring data to maintenance
//! decisions:
//!
//! * [`fe`] — plane-stress finite-element model of the benchmark bridge
//!   (modal analysis, static capacity, damage application),
//! * [`deterioration`] — stochastic damage-growth model `D(t) = A·t^B` with
//!   lognormal/normal priors,
//! * [`vibration`] — ambient-response simulation, measurement noise,
//!   covariance-driven stochastic subspace identification, mode matching and
//!   curvature extraction,
//! * [`surrogate`] — precomputed modal/capacity grids with nearest-neighbour
//!   lookup and polynomial response surfaces,
//! * [`bayes`] — sequential Bayesian updating of the deterioration parameters
//!   (MAP + Laplace approximation, adaptive Metropolis MCMC),
//! * [`reliability`] — annual-interval failure probabilities, accumulated
//!   failure probability and hazard, prior and posterior,
//! * [`decision`] — heuristic threshold life-cycle cost optimization, value of
//!   information (VoI) and value of partial perfect information (VPPI),
//! * [`pipeline`] — glue that runs whole prior/preposterior campaigns.
//!
//! All randomness flows from explicit seeds (see [`seeds`]); identical seeds
//! reproduce identical outputs bit-for-bit, which the decision layer relies on
//! when comparing prior and preposterior analyses on shared samples.

pub mod bayes;
pub mod decision;
pub mod deterioration;
pub mod fe;
pub mod linalg;
pub mod pipeline;
pub mod reliability;
pub mod seeds;
pub mod surrogate;
pub mod vibration;

use thiserror::Error;

/// Crate-wide error type. Variants distinguish the failure class so callers
/// (and the CLI exit-code mapping) can react accordingly.
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration (bad mesh sizes, Nyquist violations, missing presets).
    #[error("configuration error: {0}")]
    Config(String),
    /// Argument outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),
    /// Numerical failure (non-convergence, singular system, indefinite Hessian).
    #[error("numerical error: {0}")]
    Numerical(String),
    /// System identification failed (too few stable modes, poor MAC pairing).
    #[error("identification error: {0}")]
    Identification(String),
    /// Surrogate construction or evaluation failed.
    #[error("surrogate error: {0}")]
    Surrogate(String),
    /// Query outside the tolerance band of a lookup table.
    #[error("extrapolation error: {0}")]
    Extrapolation(String),
    /// Bayesian inference failed (optimizer budget exhausted, bad posterior).
    #[error("inference error: {0}")]
    Inference(String),
    /// Decision analysis inconsistency (mismatched sample sets, missing posteriors).
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
