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

    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("row {row}: expected {expected} features, found {found}")]
    DimensionMismatch {
        row: usize,
        expected: usize,
        found: usize,
    },

    #[error("row {row}: non-finite feature value")]
    NonFinite { row: usize },

    #[error("row {row}: duplicate id {id}")]
    DuplicateId { row: usize, id: u64 },

    #[error("unknown id {0}")]
    UnknownId(u64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: {0}")]
    Shape(String),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("truth labels contain a single class")]
    SingleClass,

    #[error("pool has no ground truth for id {0}")]
    MissingTruth(u64),

    #[error("label set does not match the pending display (missing {missing:?}, extra {extra:?})")]
    LabelMismatch { missing: Vec<u64>, extra: Vec<u64> },

    #[error("labeling budget exhausted; session is complete")]
    SessionComplete,

    #[error("budget {budget} is smaller than the initial display size {initial}")]
    BudgetTooSmall { budget: usize, initial: usize },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn param(message: impl Into<String>) -> Self {
        Error::InvalidParameter(message.into())
    }
}
