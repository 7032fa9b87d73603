//! Error type shared across the toolkit.

use thiserror::Error;

/// Errors produced by toolkit operations.
///
/// Variants are grouped by the process exit code the CLI maps them to:
/// argument errors (2), I/O errors (3), numerical/geometric failures (4).
#[derive(Debug, Error)]
pub enum Error {
    /// Invalid argument, shape mismatch, or unknown name.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// File-system or serialization failure.
    #[error("i/o error: {0}")]
    Io(String),

    /// Degenerate geometry, rank deficiency, or non-finite values.
    #[error("numerical failure: {0}")]
    Numerical(String),
}

impl Error {
    pub fn argument(msg: impl Into<String>) -> Self {
        Error::Argument(msg.into())
    }

    pub fn io(msg: impl Into<String>) -> Self {
        Error::Io(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    /// Exit code the CLI uses for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Argument(_) => 2,
            Error::Io(_) => 3,
            Error::Numerical(_) => 4,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
