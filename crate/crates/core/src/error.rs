use thiserror::Error;

/// Errors raised by fitting, evaluation and I/O routines.
#[derive(Debug, Error)]
pub enum KdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("optimization diverged at iteration {iteration}: {reason}")]
    Diverged { iteration: usize, reason: String },

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, KdError>;

pub(crate) fn invalid<T>(msg: impl Into<String>) -> Result<T> {
    Err(KdError::InvalidInput(msg.into()))
}
