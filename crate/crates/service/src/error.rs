use std::path::PathBuf;

use pbm_core::trials::SubmissionError;
use pbm_core::PbmError;

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("missing asset: {0}")]
    MissingAsset(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("pool has {genuine} genuine and {impostor} impostor pairs, need {need} of each")]
    InsufficientPool { genuine: usize, impostor: usize, need: usize },
    #[error("no completed evaluation trial is waiting for verification")]
    NothingToVerify,
    #[error(transparent)]
    Submission(#[from] SubmissionError),
    #[error(transparent)]
    Core(#[from] PbmError),
    #[error("corrupt log at line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> ServiceError {
    ServiceError::Io {
        path: path.into(),
        source,
    }
}
