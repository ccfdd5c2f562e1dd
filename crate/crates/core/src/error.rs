use thiserror::Error;

/// Errors raised anywhere in the model, training, or evaluation stack.
#[derive(Debug, Error)]
pub enum FpbError {
    #[error("dimension error in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },

    #[error("index error: id {id} out of range for size {size}")]
    Index { id: usize, size: usize },

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("config error: {field}: {message}")]
    Config { field: String, message: String },

    #[error("gradient oracle error: {0}")]
    Oracle(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FpbError {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        FpbError::Dimension {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        FpbError::Contract(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        FpbError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FpbError>;
