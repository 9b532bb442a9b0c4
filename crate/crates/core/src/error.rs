use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("transport error: {0}")]
    Transport(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("incomplete test: ran {elapsed_seconds:.3}s, at least {required_seconds:.3}s required")]
    IncompleteTest {
        elapsed_seconds: f64,
        required_seconds: f64,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("import rejected at row {row}: {message}")]
    Import { row: usize, message: String },

    #[error("storage error: {0}")]
    Storage(#[from] io::Error),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("test slot busy: waited {0:?}")]
    Busy(std::time::Duration),

    #[error("startup error: {0}")]
    Startup(String),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn insufficient(msg: impl Into<String>) -> Self {
        Error::InsufficientData(msg.into())
    }
}
