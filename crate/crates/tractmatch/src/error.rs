//! Crate-wide error type.
//!
//! Variants are grouped by the exit code the CLI maps them to: configuration
//! problems (2), data/input problems (3), and numeric failures (4).

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("config: {0}")]
    Config(String),

    #[error("schema: missing column `{column}` in {file}")]
    MissingColumn { file: String, column: String },

    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },

    #[error("data: {0}")]
    Data(String),

    #[error("geometry: {0}")]
    Geometry(String),

    #[error("numeric: {0}")]
    Numeric(String),

    #[error("io: {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::MissingColumn { .. }
            | Error::Malformed { .. }
            | Error::Data(_)
            | Error::Geometry(_)
            | Error::Io { .. }
            | Error::Json(_) => 3,
            Error::Numeric(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
