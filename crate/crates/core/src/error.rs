use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, CignError>;

#[derive(Debug, Error)]
pub enum CignError {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{op}: axis {axis} out of range for rank {rank}")]
    InvalidAxis {
        op: &'static str,
        axis: usize,
        rank: usize,
    },

    #[error("{op}: input outside domain ({detail})")]
    Domain { op: &'static str, detail: String },

    #[error("{op}: vector norm below {eps:e}")]
    DegenerateVector { op: &'static str, eps: f64 },

    #[error("expected a scalar, got shape {shape:?}")]
    NonScalar { shape: Vec<usize> },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite gradient in parameter `{param}`")]
    NonFiniteGradient { param: String },

    #[error("non-finite loss at task {task}, step {step}")]
    NonFiniteLoss { task: usize, step: usize },

    #[error("corrupt file {path}: {detail}")]
    Corrupt { path: PathBuf, detail: String },

    #[error("unsupported format version {found} (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("missing artifacts in {dir}: {missing:?}")]
    MissingArtifacts { dir: PathBuf, missing: Vec<String> },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CignError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CignError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CignError::Config(msg.into())
    }
}
