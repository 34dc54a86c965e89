use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: String, got: String },

    #[error("tensor is not positive semidefinite (min eigenvalue {min_eig:e}, scale {scale:e})")]
    NotPsd { min_eig: f64, scale: f64 },

    #[error("invalid mapping on element {element}: {detail}")]
    InvalidMapping { element: usize, detail: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("inadmissible decomposition: {0}")]
    InadmissibleDecomposition(String),

    #[error("no convergence after {iterations} iterations (last estimate {last:e}, interval {interval:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        interval: f64,
    },

    #[error("problem size {size} exceeds the dense limit {limit}")]
    SizeGuard { size: usize, limit: usize },

    #[error("penalty estimate violated: {0}")]
    EstimateViolated(String),

    #[error("numerical instability at step {step}")]
    Unstable { step: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
