use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid recording: {0}")]
    InvalidRecording(String),

    #[error("refusing to upsample from {source_hz} Hz to {target_hz} Hz")]
    UpsamplingRefused { source_hz: f64, target_hz: f64 },

    #[error("recording too short: {0} samples, need at least 2")]
    TooShort(usize),

    #[error("insufficient users: have {have}, need {need}")]
    InsufficientUsers { have: usize, need: usize },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("unknown transform kind `{0}`")]
    UnknownTransform(String),

    #[error("invalid flag value {0}; multitask flags must be 0 or 1")]
    InvalidFlag(f64),

    #[error("contrastive loss needs at least 2 batch items for negatives, got {0}")]
    NoNegatives(usize),

    #[error("training needs at least 2 classes, found {0}")]
    SingleClass(usize),

    #[error("non-finite loss at epoch {epoch}: {detail}")]
    NonFiniteLoss { epoch: usize, detail: String },

    #[error("missing checkpoint: {0}")]
    MissingCheckpoint(String),

    #[error("all {n} search trials failed: {failures}")]
    AllTrialsFailed { n: usize, failures: String },

    #[error("corrupt archive {path}: {reason}")]
    CorruptArchive { path: PathBuf, reason: String },

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) trait IoContext<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T>;
}

impl<T> IoContext<T> for std::io::Result<T> {
    fn at(self, path: impl Into<PathBuf>) -> Result<T> {
        self.map_err(|source| Error::Io {
            path: path.into(),
            source,
        })
    }
}
