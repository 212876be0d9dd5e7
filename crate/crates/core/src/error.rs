use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("missing required field `{0}`")]
    MissingField(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid image: {0}")]
    Image(String),

    #[error("quota {quota} exceeds population of {population}")]
    Quota { quota: usize, population: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("token id {id} outside vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("correlation undefined: {0} has zero variance")]
    UndefinedCorrelation(&'static str),

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("underdetermined fit: need at least 3 distinct fractions, got {0}")]
    Underdetermined(usize),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("a benchmark is already running in this process")]
    BenchmarkBusy,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse error classes, used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::BenchmarkBusy => ErrorClass::Usage,
            Error::UndefinedCorrelation(_) | Error::NonFinite { .. } | Error::Underdetermined(_) => {
                ErrorClass::Numerical
            }
            _ => ErrorClass::Data,
        }
    }
}
