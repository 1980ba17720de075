//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("manifest {path}:{line}: {message}")]
    Manifest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("cannot parse person/camera ids from file name {0:?}")]
    FilenamePattern(String),

    #[error("image {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("loss input error: {0}")]
    Loss(String),

    #[error("non-finite loss at epoch {epoch} step {step}; batch images: {batch:?}")]
    NonFiniteLoss {
        epoch: usize,
        step: usize,
        batch: Vec<String>,
    },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("checkpoint {path}: incompatible with current configuration: {message}")]
    CheckpointConfig { path: PathBuf, message: String },

    #[error("feature file {path}: {message}")]
    FeatureFile { path: PathBuf, message: String },

    #[error("io error on {path}: {source}")]
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
