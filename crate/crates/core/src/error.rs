use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// A malformed row in one of the delimited instance files.
    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: u64,
        message: String,
    },

    #[error("config {path}: {message}")]
    Config { path: PathBuf, message: String },

    #[error("invalid instance: {0}")]
    Validation(String),

    #[error("headway error: {0}")]
    Headway(String),

    #[error("path explosion for OD {od}: more than {cap} paths")]
    PathExplosion { od: String, cap: usize },

    #[error("solver failure: {0}")]
    Solver(String),

    /// Signals a broken invariant inside the refinement loop.
    #[error("refinement contradiction: {0}")]
    Refinement(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
