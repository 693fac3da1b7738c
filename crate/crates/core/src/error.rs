use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// Zero-norm vectors, empty inputs and other values a computation is undefined on.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("ingestion error in {path} at {location}: {message}")]
    Ingestion {
        path: PathBuf,
        location: String,
        message: String,
    },

    /// Pool bookkeeping violations: relabels, unknown ids, labels outside the pending set.
    #[error("consistency error: {0}")]
    Consistency(String),

    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("template error: {0}")]
    Template(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("missing prototype for ID classes {0:?}")]
    MissingClass(Vec<usize>),

    #[error("metric unavailable: {0}")]
    Metric(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn ingestion(
        path: impl Into<PathBuf>,
        location: impl Into<String>,
        message: impl Into<String>,
    ) -> Self {
        Error::Ingestion {
            path: path.into(),
            location: location.into(),
            message: message.into(),
        }
    }
}
