//! Crate-wide error type with a coarse validation/runtime split.
//!
//! The CLI maps [`ErrorKind::Validation`] to exit code 1 (bad input: missing
//! files, malformed records, out-of-range arguments) and everything else to
//! exit code 2.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Caller-supplied input is wrong: bad paths, malformed records,
    /// out-of-range parameters. Recoverable by fixing the invocation.
    #[error("{0}")]
    Validation(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    /// A persisted artifact is corrupt or has an unexpected layout.
    #[error("format error: {0}")]
    Format(String),

    /// Failure while executing an otherwise valid request.
    #[error("{0}")]
    Runtime(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Runtime,
}

impl Error {
    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    pub fn runtime(msg: impl Into<String>) -> Self {
        Error::Runtime(msg.into())
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Validation(_) => ErrorKind::Validation,
            _ => ErrorKind::Runtime,
        }
    }
}
