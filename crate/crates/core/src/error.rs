use thiserror::Error;

use crate::estimator::FitDiagnostics;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the library can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("malformed data in practice {practice}, patient {patient}, course {course}: {message}")]
    MalformedData {
        practice: String,
        patient: String,
        course: u32,
        message: String,
    },

    #[error("encoding error: {0}")]
    Encoding(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("Newton-Raphson did not converge for origin state {origin} after {} iterations (gradient max-norm {:.3e})", .diagnostics.iterations, .diagnostics.grad_max_norm)]
    NonConvergence {
        origin: u32,
        diagnostics: FitDiagnostics,
    },

    #[error("perfect separation for origin state {origin}: coefficient of `{predictor}` toward state {destination} diverged")]
    Separation {
        origin: u32,
        destination: u32,
        predictor: String,
    },

    #[error("empty data: {0}")]
    EmptyData(String),

    #[error("{failures} of {requested} direct bootstrap replicates failed to converge (more than 5%); consider the estimating function bootstrap")]
    TooManyFailures { failures: usize, requested: usize },

    #[error("at least {needed} bootstrap replicates are required, got {got}")]
    TooFewReplicates { got: usize, needed: usize },

    #[error("non-finite score on bootstrap replicate {0}")]
    NonFiniteScore(usize),

    #[error("fitted model has no coefficient block for origin state {0}")]
    MissingBlock(u32),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::InvalidConfig(msg.into())
    }
}
