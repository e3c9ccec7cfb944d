use thiserror::Error;

use crate::tensor::TensorError;
use crate::threshold::ThresholdError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Threshold(#[from] ThresholdError),
    #[error("{0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite value at step {step} in `{param}`")]
    NonFinite { step: usize, param: String },
    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("budget has no entry for layer `{0}`")]
    MissingLayer(String),
    #[error("layer `{0}` has no architecture mapping")]
    UnmappedLayer(String),
    #[error("dataset: {0}")]
    Dataset(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Self::Io { context: context.into(), source }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
