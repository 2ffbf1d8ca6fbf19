use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An invalid task spec, training config or experiment config.
    #[error("configuration error: {0}")]
    Config(String),

    /// A benchmark file uses a keyword or layout we do not support.
    #[error("unsupported format: `{keyword}` ({detail})")]
    UnsupportedFormat { keyword: String, detail: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A caller broke an operation's precondition (e.g. stepping with a masked action).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite value in `{tensor}`")]
    Numerical { tensor: String },

    /// Stored data disagrees with what it is checked against (e.g. buffered mask vs. recomputed mask).
    #[error("data corruption: {0}")]
    DataCorruption(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("binary encoding: {0}")]
    Binary(#[from] bincode::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }
}
