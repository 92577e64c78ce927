//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by simulation, processing, and I/O routines.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or configuration value violates its documented range.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A mathematically undefined request (projection behind the camera,
    /// depth beyond the unambiguous range, probability of an empty
    /// response, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Two containers that must be aligned have different shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A text or binary payload could not be decoded.
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
