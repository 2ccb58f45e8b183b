//! Error taxonomy shared across the crate.
//!
//! Variants map onto the CLI exit codes: `Config`/`Usage` are caller
//! mistakes, `Numeric` covers divergence and tolerance failures, `Io`/`Parse`
//! cover the filesystem surface.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Shapes that cannot be combined, e.g. a matmul with mismatched inner extents.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A hyperparameter or structural setting that can never work.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Legal configuration used incorrectly at call time.
    #[error("usage error: {0}")]
    Usage(String),

    /// NaN losses, divergence, failed tolerance checks.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
    pub fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
    pub fn numeric(msg: impl Into<String>) -> Self {
        Error::Numeric(msg.into())
    }
    pub fn parse(msg: impl Into<String>) -> Self {
        Error::Parse(msg.into())
    }
}
