use std::io;

use thiserror::Error;

/// Errors produced anywhere in the separation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    ShapeError(String),

    #[error("reference signal is silent")]
    SilentTarget,

    #[error("no silent frames in target")]
    NoSilence,

    #[error("reference signals are linearly dependent")]
    DegenerateReferences,

    #[error("malformed file: {0}")]
    FormatError(String),

    #[error("unsupported format: {0}")]
    UnsupportedFormat(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::ShapeError(msg.into())
}
