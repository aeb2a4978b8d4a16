use std::path::PathBuf;

use actisleep_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Nn(#[from] NnError),

    #[error("series is empty")]
    EmptySeries,

    #[error("series has {len} epochs but at least {required} are needed")]
    SeriesTooShort { len: usize, required: usize },

    #[error("series `{0}` is not labeled")]
    Unlabeled(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("checkpoint holds a `{found}` model but `{expected}` was requested")]
    SpecMismatch { expected: String, found: String },

    #[error("non-finite loss or gradient at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },

    #[error("model parameters have not been trained or loaded")]
    Unloaded,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
