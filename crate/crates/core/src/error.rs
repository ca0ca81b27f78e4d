use std::path::PathBuf;

use thiserror::Error;

use crate::backend::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parallel files are not aligned: {source_lines} vs {target_lines} lines")]
    Alignment {
        source_lines: usize,
        target_lines: usize,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    /// A caller broke an operation's precondition.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index integrity check failed: {0}")]
    Integrity(String),

    #[error("prompt does not fit the token budget: {0}")]
    Budget(String),

    #[error("undefined statistic: {0}")]
    Undefined(String),

    #[error(transparent)]
    Backend(#[from] BackendError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the environment (files, network) rather
    /// than by the inputs themselves.
    pub fn is_environmental(&self) -> bool {
        match self {
            Error::Io { .. } => true,
            Error::Backend(e) => e.is_transport(),
            _ => false,
        }
    }
}
