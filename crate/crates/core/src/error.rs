use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor dimensions do not line up for the requested operation.
    #[error("shape error: {0}")]
    Shape(String),

    /// Input lies outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Operation is not valid in the current train/fused form.
    #[error("state error: {0}")]
    State(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    /// Malformed bytes in a `.rvt` or `.rvck` file.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    /// Checkpoint contents disagree with the model its config describes.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        Error::Format {
            offset,
            message: message.into(),
        }
    }
}
