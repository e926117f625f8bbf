use thiserror::Error;

use crate::shape::ShapeError;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("invalid scenario: {0}")]
    Scenario(String),
    #[error("malformed JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("malformed trace: {0}")]
    Trace(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl SimError {
    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        SimError::Io { path: path.as_ref().display().to_string(), source }
    }

    /// True for problems with the input's content rather than with reading or writing it.
    pub fn is_validation(&self) -> bool {
        !matches!(self, SimError::Io { .. })
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
