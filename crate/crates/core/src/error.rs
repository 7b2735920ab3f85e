use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A survival objective was requested on a set with no observed events.
    #[error("no observed events: partial likelihood undefined")]
    NoEvents,

    #[error("no comparable pairs: concordance undefined")]
    NoComparablePairs,

    #[error("singular information matrix (condition estimate {condition:.3e})")]
    Singular { condition: f64 },

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("corrupt file {}: {reason} at byte offset {offset}", path.display())]
    Corrupt {
        path: PathBuf,
        offset: u64,
        reason: String,
    },

    #[error("backward called without a matching forward cache")]
    MissingCache,

    #[error("config error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
