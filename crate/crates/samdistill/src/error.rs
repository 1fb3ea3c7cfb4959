use std::path::PathBuf;

use samdistill_core::CoreError;
use thiserror::Error;

use crate::train::TrainLogRecord;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Core(#[from] CoreError),
    #[error("tensor op failed: {0}")]
    Tensor(#[from] autograd::Error),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("invalid degradation: {0}")]
    Degradation(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("segmentation: {0}")]
    Segment(String),
    #[error("fewer than two usable masks ({valid}) for a relation matrix")]
    DegenerateRelation { valid: usize },
    #[error("perceptual weights: {0}")]
    Weights(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at step {}: {record:?}", record.step)]
    NonFiniteLoss { record: Box<TrainLogRecord> },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Caused by the caller's input (config, paths, files) rather than by a
    /// defect or a numerical failure.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Core(e) => matches!(
                e,
                CoreError::Io { .. } | CoreError::Decode { .. } | CoreError::Json { .. } | CoreError::MissingMask { .. }
            ),
            Error::Config(_)
            | Error::Degradation(_)
            | Error::Dataset(_)
            | Error::Weights(_)
            | Error::Checkpoint(_)
            | Error::Io { .. }
            | Error::Json { .. } => true,
            Error::Tensor(_) | Error::Segment(_) | Error::DegenerateRelation { .. } | Error::NonFiniteLoss { .. } => false,
        }
    }
}

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
    let path = path.into();
    move |source| Error::Io { path, source }
}

pub(crate) fn json_err(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
    let path = path.into();
    move |source| Error::Json { path, source }
}
