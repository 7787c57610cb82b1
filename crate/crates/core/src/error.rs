use thiserror::Error;

/// Errors raised by data ingestion, model fitting and inference.
#[derive(Debug, Error)]
pub enum LmError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("observation impossible under the model at occasion {occasion}")]
    ImpossibleObservation { occasion: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, LmError>;

impl LmError {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        LmError::Data(msg.into())
    }

    pub(crate) fn arg(msg: impl Into<String>) -> Self {
        LmError::InvalidArgument(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        LmError::Numerical(msg.into())
    }
}
