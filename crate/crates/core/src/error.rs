//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("grid geometry mismatch on `{field}`: {left} vs {right}")]
    GridGeometry {
        field: &'static str,
        left: String,
        right: String,
    },

    #[error("empty window: no frames in [{t_begin}, {t_end}]")]
    EmptyWindow { t_begin: f64, t_end: f64 },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("stream error: {0}")]
    Stream(String),

    #[error("archive error: {0}")]
    Archive(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("split error: {0}")]
    Split(String),

    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },

    #[error("training diverged at step {step}: {details}")]
    Diverged { step: usize, details: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
