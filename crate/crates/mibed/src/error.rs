//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or arguments (dimension mismatches, bad ranges).
    #[error("configuration error: {0}")]
    Config(String),

    /// A computation produced non-finite values or underflowed entirely.
    #[error("numerical error: {0}")]
    Numerical(String),

    /// A capability required by the caller is not provided by the model.
    #[error("contract error: {0}")]
    Contract(String),

    /// The requested task/model combination is not supported.
    #[error("unsupported task: {0}")]
    UnsupportedTask(String),

    /// A cache or checkpoint file failed validation.
    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
