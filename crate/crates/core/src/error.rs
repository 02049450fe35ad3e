use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported slide format: {0}")]
    UnsupportedFormat(String),

    #[error("corrupt pyramid: {0}")]
    CorruptPyramid(String),

    #[error("region out of bounds: {0}")]
    OutOfBounds(String),

    #[error("failed to read slide data: {0}")]
    ReadFailure(String),

    #[error("unreadable mask {path}: {reason}")]
    UnreadableMask { path: PathBuf, reason: String },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("target magnification {target}x exceeds objective power {objective}x")]
    MagnificationUnavailable { target: f64, objective: f64 },

    #[error("coordinate store corrupt: {0}")]
    StoreCorrupt(String),

    #[error("unknown encoder `{0}`")]
    UnknownEncoder(String),

    #[error("edge contrast undefined: {0}")]
    UndefinedContrast(&'static str),

    #[error("mask contains no tissue")]
    NoTissue,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Hdf5(#[from] hdf5::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
