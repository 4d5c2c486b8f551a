use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the mining engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("format error: {0}")]
    Format(String),

    #[error("truncated input: expected {expected} payload bytes, found {found}")]
    Truncated { expected: u64, found: u64 },

    #[error("data error: {0}")]
    Data(String),

    #[error("degenerate input: row {row} has zero norm")]
    Degenerate { row: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io",
            Error::Format(_) => "format",
            Error::Truncated { .. } => "truncated",
            Error::Data(_) => "data",
            Error::Degenerate { .. } => "degenerate",
            Error::Parse { .. } => "parse",
            Error::Validation(_) => "validation",
            Error::Config(_) => "config",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
