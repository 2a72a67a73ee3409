//! Crate-wide error type.

use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A text file (vocabulary, corpus, config, eval set) failed to parse.
    #[error("malformed {what} in {path}: {msg}")]
    Format {
        what: &'static str,
        path: PathBuf,
        msg: String,
    },

    /// A binary artifact failed its magic/version/checksum/length checks.
    #[error("corrupt artifact {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },

    /// Two artifacts were built against different vocabularies.
    #[error("vocabulary hash mismatch: {what} was built against a different vocabulary (expected {expected}, found {found})")]
    VocabMismatch {
        what: &'static str,
        expected: String,
        found: String,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// An operation precondition was violated by the caller.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("training diverged: {0}")]
    Training(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(what: &'static str, path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            what,
            path: path.into(),
            msg: msg.into(),
        }
    }

    pub fn corrupt(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Corrupt {
            path: path.into(),
            msg: msg.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
