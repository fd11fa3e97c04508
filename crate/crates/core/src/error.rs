use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AbenError {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),
    #[error("invalid reference: {0}")]
    InvalidReference(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("image error: {0}")]
    Image(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("vocabulary error: {0}")]
    Vocab(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss { epoch: usize, batch: usize, detail: String },
    #[error(transparent)]
    Metric(#[from] aben_metrics::MetricError),
}

impl AbenError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }
}

pub type Result<T, E = AbenError> = std::result::Result<T, E>;
