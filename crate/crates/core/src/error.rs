use std::path::PathBuf;

use thiserror::Error;

/// A single failed check reported by configuration validation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for FieldError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("numerical degeneracy: {0}")]
    NumericalDegeneracy(String),

    #[error("guidance diverged at step {step} (t={t}): non-finite guidance gradient")]
    GuidanceDiverged { step: usize, t: usize },

    #[error("training diverged at step {step}: loss is {loss}")]
    TrainingDiverged { step: usize, loss: f64 },

    #[error("detector failed: {0}")]
    Detector(String),

    #[error("caption failed: {0}")]
    Caption(String),

    #[error("generator failed: {0}")]
    Generator(String),

    #[error("dataset build failed: {0}")]
    Build(String),

    #[error("unresolvable paths in manifest: {}", .0.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(", "))]
    UnresolvedPaths(Vec<PathBuf>),

    #[error("invalid configuration:\n{}", .0.iter().map(|e| format!("  - {e}")).collect::<Vec<_>>().join("\n"))]
    Config(Vec<FieldError>),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
