use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}: unsupported mesh format")]
    UnsupportedFormat { path: PathBuf },

    #[error("empty mesh")]
    EmptyMesh,

    #[error("non-finite coordinates")]
    NonFinite,

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("zero-extent bounding box")]
    DegenerateBounds,

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("bad file: {0}")]
    Format(String),

    #[error("fitting diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Diff(#[from] diffkit::DiffError),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
