//! Crate-wide error type.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    /// Row- or line-level problem in an input file.
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("no mechanism entry for relation `{relation}` and no default rule")]
    MissingMechanism { relation: String },

    #[error("invalid mechanism config: {0}")]
    InvalidConfig(String),

    #[error("community detection requires a non-empty snapshot")]
    EmptySnapshot,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A pipeline stage was invoked before the stage that produces its input.
    #[error("missing stage input {path}: {hint}")]
    MissingInput { path: PathBuf, hint: String },

    #[error("model format error: {0}")]
    ModelFormat(String),

    #[error("infeasible script directive: {0}")]
    InfeasibleDirective(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub fn parse(path: impl Into<PathBuf>, line: u64, message: impl Into<String>) -> Self {
        Error::Parse { path: path.into(), line, message: message.into() }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
