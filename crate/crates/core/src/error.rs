use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CanError>;

#[derive(Debug, Error)]
pub enum CanError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("tape already consumed by a previous backward pass")]
    TapeConsumed,

    #[error("variable does not belong to this tape")]
    ForeignVar,

    #[error("blob error: {0}")]
    Blob(String),

    #[error("manifest {path}:{line}: {msg}")]
    Manifest {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("data error: {0}")]
    Data(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CanError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CanError::Io {
            path: path.into(),
            source,
        }
    }
}

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::error::CanError::Shape(format!($($arg)*))
    };
}
pub(crate) use shape_err;
