//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArg(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("training failed: {0}")]
    Train(String),

    #[error("missing {what}: {detail}")]
    Missing { what: String, detail: String },

    #[error("unknown config key `{0}`")]
    UnknownKey(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, line: usize, msg: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            msg: msg.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArg(msg.into())
    }

    pub fn missing(what: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Missing {
            what: what.into(),
            detail: detail.into(),
        }
    }
}
