use thiserror::Error;

/// Errors produced by the simulation, learning and control routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: qudit dimension must be at least 2")]
    InvalidDimension(usize),

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("observable is not invertible: {0}")]
    Invertibility(String),

    #[error("degenerate observable: {0}")]
    DegenerateObservable(String),

    #[error("invalid Choi matrix: {0}")]
    InvalidChoi(String),

    #[error("fit error: {0}")]
    Fit(String),

    #[error("training diverged: {0}")]
    Divergence(String),

    #[error("optimization failed: {message}")]
    OptimizationFailure { message: String, best_theta: Vec<f64> },

    #[error("format error: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
