use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{file}:{line}: {message}")]
    Parse {
        file: String,
        line: usize,
        message: String,
    },

    #[error("unknown {kind} id `{id}`")]
    UnknownId { kind: &'static str, id: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(
        "non-finite update for user {user}, item {item} at epoch {epoch}; learning rate {learn_rate} is likely too high"
    )]
    NonFinite {
        user: usize,
        item: usize,
        epoch: usize,
        learn_rate: f64,
    },

    #[error("bad format: {0}")]
    Format(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
