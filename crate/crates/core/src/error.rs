use thiserror::Error;

/// Failures surfaced by the library.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("empty support")]
    EmptySupport,
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("no convergence after {iterations} iterations (last decrement {last:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        trace: Vec<f64>,
    },
    #[error("divergence: {reason}")]
    Divergence { reason: String, trace: Vec<f64> },
}

pub type Result<T> = std::result::Result<T, Error>;
