use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op} produced a non-finite value (node {node})")]
    NonFinite { op: &'static str, node: usize },

    #[error("backward root must be a scalar, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{op} is not available in {mode} mode")]
    WrongMode { op: &'static str, mode: &'static str },

    #[error("matrix is not symmetric positive semi-definite: {0}")]
    NotPsd(String),

    #[error("singular covariance matrix")]
    Singular,

    #[error("IDX format error in {path}: {reason}")]
    Idx { path: PathBuf, reason: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("loss became non-finite at step {step}")]
    NanAbort { step: usize },

    #[error("frozen parameter {0} changed during training")]
    FrozenModified(String),

    #[error("snapshot error: {0}")]
    Snapshot(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
