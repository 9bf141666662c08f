//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by mesh construction, assembly, solvers, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A linear system could not be factored or solved.
    #[error("linear solve failed: {0}")]
    Singular(String),

    /// A text file did not parse as the expected tabular format.
    #[error("parse error: {0}")]
    Parse(String),

    /// Underlying file-system failure.
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Shorthand for an [`Error::InvalidArgument`] with a formatted message.
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
