use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),

    #[error("invalid label: {0}")]
    InvalidLabel(String),

    #[error("pair ({0}, {1}) already labelled")]
    DuplicatePair(usize, usize),

    #[error("comparison graph is disconnected ({} components: {components:?})", components.len())]
    Disconnected { components: Vec<Vec<usize>> },

    #[error("{0} is outside the domain (0, 1)")]
    Domain(f64),

    #[error("degenerate variance: mean difference {0} with zero variance")]
    DegenerateVariance(f64),

    #[error("invalid config: {}", .0.join("; "))]
    Config(Vec<String>),

    #[error("environment spec hash mismatch: expected {expected}, found {found}")]
    SpecMismatch { expected: String, found: String },

    #[error("{0} not found")]
    NotFound(String),

    #[error("stale or unknown nonce {0:?}")]
    StaleNonce(String),

    #[error("invalid state: {0}")]
    InvalidState(String),

    #[error("labeler timed out")]
    LabelerTimeout,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
