use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("skin weight row {row} is not on the probability simplex")]
    InvalidWeights { row: usize },

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid pose: {0}")]
    InvalidPose(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch { what: &'static str, expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("degenerate 6D rotation input")]
    DegenerateRotation,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("point set is empty")]
    EmptyPointSet,

    #[error("edge set is empty")]
    EmptyEdgeSet,

    #[error("non-finite gradient in parameter group `{group}`")]
    NonFiniteGradient { group: String },

    #[error("non-finite loss at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },

    #[error("malformed {format} data: {message}")]
    Format { format: &'static str, message: String },

    #[error("checkpoint section `{section}` is missing or corrupt: {message}")]
    Checkpoint { section: String, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn format(format: &'static str, message: impl Into<String>) -> Self {
        Error::Format { format, message: message.into() }
    }

    /// True for errors caused by non-finite numerics rather than bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NonFiniteGradient { .. } | Error::NonFiniteLoss { .. } | Error::DegenerateRotation
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
