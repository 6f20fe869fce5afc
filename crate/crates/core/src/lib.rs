//! Distributionally robust adaptive recoding for batched network coding.
//!
//! Intermediate nodes of a batched-network-coded line network decide, per
//! batch rank, how many recoded packets to transmit. When the input rank
//! distribution is only known through a handful of samples, optimizing
//! against the empirical distribution alone generalizes poorly. This crate
//! implements the robust alternative: optimize the worst case over a
//! 1-Wasserstein ball around the empirical distribution, with the ball
//! radius calibrated from the samples themselves.
//!
//! The crate is organized around the pipeline:
//!
//! * [`rank_model`] — expected-rank function of a lossy link and its
//!   piecewise-linear decomposition,
//! * [`distributions`] — rank distributions, Wasserstein distance, and
//!   Monte Carlo radius calibration,
//! * [`saa`] — sample-average baselines (greedy allocator and epigraph LP),
//! * [`dro`] — the robust counterpart as a sparse LP, plus exact dual
//!   evaluators used for verification,
//! * [`lp_solver`] — matrix equilibration and an adaptive primal-dual
//!   hybrid gradient solver,
//! * [`netsim`] — rank-level line-network simulator and experiment
//!   harnesses.

pub mod distributions;
pub mod dro;
pub mod lp_solver;
pub mod netsim;
pub mod rank_model;
pub mod saa;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid channel model: {0}")]
    InvalidChannel(String),
    #[error("rank {rank} exceeds batch size {max}")]
    RankOutOfRange { rank: usize, max: usize },
    #[error("packet count {0} is invalid (must be finite and nonnegative)")]
    InvalidPacketCount(f64),
    #[error("value {value} outside piecewise domain [0, {max}] for rank {rank}")]
    OutsidePiecewiseDomain { rank: usize, value: f64, max: usize },
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
    #[error("empty sample set")]
    EmptySamples,
    #[error("sample rank {rank} exceeds batch size {max}")]
    SampleOutOfRange { rank: usize, max: usize },
    #[error("invalid calibration parameter: {0}")]
    InvalidCalibration(String),
    #[error("invalid budget: {0}")]
    InvalidBudget(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("LP problem is malformed: {0}")]
    MalformedProblem(String),
    #[error("solver did not converge after {iterations} iterations (primal {primal:.3e}, dual {dual:.3e}, gap {gap:.3e})")]
    SolverDidNotConverge {
        iterations: usize,
        primal: f64,
        dual: f64,
        gap: f64,
    },
    #[error("policy file is malformed: {0}")]
    MalformedPolicy(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
