use thiserror::Error;

/// Errors surfaced by model construction, inference, and LOO estimation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("covariance matrix is not positive definite (jitter escalated to {jitter:.3e})")]
    NotPositiveDefinite { jitter: f64 },

    #[error("numerical failure: {0}")]
    NumericalFailure(String),

    #[error("unsupported operation: {0}")]
    UnsupportedOperation(String),

    #[error("{method} did not converge after {iterations} iterations: {detail}")]
    NonConvergence {
        method: &'static str,
        iterations: usize,
        detail: String,
    },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("cavity failure at point {index}: {detail}")]
    CavityFailure { index: usize, detail: String },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
