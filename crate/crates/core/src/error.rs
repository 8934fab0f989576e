use std::path::PathBuf;

/// Errors produced by the rule-list library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("malformed document: {0}")]
    Json(#[from] serde_json::Error),

    #[error("unsupported document version {found:?}, expected {expected:?}")]
    Version { found: String, expected: String },

    #[error("dataset error: {0}")]
    Data(String),

    #[error("training aborted at epoch {epoch}: {reason}")]
    TrainingAborted { epoch: usize, reason: String },

    #[error("degenerate model: {0}")]
    DegenerateModel(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
