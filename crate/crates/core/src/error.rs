use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    /// An unknown or malformed dotted config key such as `optim.sgd_lr`.
    #[error("config key `{key}`: {reason}")]
    ConfigKey { key: String, reason: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("record `{0}` has no label (unlabeled target-domain training data)")]
    MissingLabel(String),

    #[error("refusing to write into non-empty directory {0} (pass overwrite to replace it)")]
    Refusal(PathBuf),

    #[error("data error: {0}")]
    Data(String),

    #[error("cross-entropy over zero non-ignored pixels is undefined")]
    UndefinedMean,

    #[error("every class is undefined (absent from both prediction and ground truth)")]
    EmptyReport,

    #[error("non-finite value in loss term `{term}`")]
    NonFinite { term: String },

    #[error("range error: {0}")]
    Range(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint is missing parameter group `{0}`")]
    MissingGroup(String),

    #[error("checkpoint not found: {0}")]
    MissingCheckpoint(PathBuf),

    #[error("interrupted at iteration {iteration}; emergency checkpoint written to {path}")]
    Interrupted { iteration: usize, path: PathBuf },

    #[error("training aborted at iteration {iteration}: {source}; emergency checkpoint written to {path}")]
    Aborted {
        iteration: usize,
        path: PathBuf,
        #[source]
        source: Box<Error>,
    },

    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
