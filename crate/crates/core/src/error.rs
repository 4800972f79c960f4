//! Error type shared by every stage of the pipeline.

use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("unsupported mesh format: {0}")]
    UnsupportedFormat(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("mesh is disconnected ({components} components)")]
    Disconnected { components: usize },

    #[error("eigensolver did not converge (max residual {residual:.3e})")]
    EigenNonConvergence { residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite gradient in parameter block `{block}`")]
    NonFiniteGradient { block: String },

    #[error("invalid manifest: {0}")]
    Manifest(String),

    #[error("config line {line}: {msg}")]
    Config { line: usize, msg: String },

    #[error("missing caches for shapes: {}", .0.join(", "))]
    MissingCache(Vec<String>),

    #[error("corrupt file {path}: {msg}")]
    Corrupt { path: PathBuf, msg: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
