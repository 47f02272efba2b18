use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("space mismatch: {0}")]
    SpaceMismatch(String),

    #[error("numerical contract violated: {0}")]
    NumericalContract(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("constraint violation: {0}")]
    ConstraintViolation(String),

    #[error("accuracy error: {0}")]
    Accuracy(String),

    #[error("contract error: {0}")]
    Contract(String),

    #[error("usage error: {0}")]
    Usage(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
