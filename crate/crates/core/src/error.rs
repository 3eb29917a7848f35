use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised across the back-end.
///
/// Variants fall into three coarse classes (I/O, data validation, numerical
/// failure) which the CLI maps onto exit codes via [`Error::class`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("zero-norm vector for utterance '{0}'")]
    ZeroVector(String),

    #[error("unknown utterance '{0}'")]
    MissingUtterance(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("rank window empty (K={negatives}, beta={beta}); increase beta or batch size")]
    EmptyWindow { negatives: usize, beta: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),
}

/// Coarse error class, used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Data,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Numerical(_) => ErrorClass::Numerical,
            _ => ErrorClass::Data,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
