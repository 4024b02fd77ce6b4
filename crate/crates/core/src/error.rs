use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the simulator, the proxy and the scenario loader.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid segment: {0}")]
    InvalidSegment(String),

    #[error("segment {index} not found (video has {total} segments)")]
    NotFound { index: u32, total: u32 },

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("internal error: {0}")]
    Internal(String),

    #[error("metric undefined: {0}")]
    Metric(String),

    #[error("{path}: {message}")]
    Scenario { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
