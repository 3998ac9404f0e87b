use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the feature pipelines.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates one of its documented invariants.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// A file could not be parsed in its declared format.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    /// Input data is well-formed but unusable (NaN payload, size mismatch, ...).
    #[error("data error: {0}")]
    Data(String),

    #[error("empty co-occurrence domain")]
    EmptyCooccurrence,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("undefined correlation: {0}")]
    UndefinedCorrelation(String),

    #[error("i/o error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format { path: path.into(), msg: msg.into() }
    }

    /// True when the error stems from a caller-supplied parameter rather than data.
    pub fn is_usage(&self) -> bool {
        matches!(self, Error::InvalidConfig(_))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Fails with [`Error::InvalidConfig`] naming `what` unless `cond` holds.
pub(crate) fn ensure(cond: bool, what: impl FnOnce() -> String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidConfig(what()))
    }
}
