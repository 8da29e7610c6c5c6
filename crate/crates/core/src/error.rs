use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("vector is not tangent at its base point (residual {residual:e})")]
    Tangency { residual: f64 },

    #[error("point is off the manifold (residual {residual:e})")]
    OffManifold { residual: f64 },

    #[error("tangent radius {radius} exceeds the injectivity radius of the sphere")]
    Injectivity { radius: f64 },

    #[error("degenerate point pair: {0}")]
    DegeneratePair(&'static str),

    #[error("degenerate direction: ||W x_s|| = {norm:e}")]
    DegenerateDirection { norm: f64 },

    #[error("degenerate midpoint: |<s,s>| = {norm:e}")]
    DegenerateMidpoint { norm: f64 },

    #[error("operation not supported in Euclidean (curvature 0) mode: {0}")]
    UnsupportedMode(&'static str),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}:{line}: {msg}")]
    Format { path: PathBuf, line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("non-finite value at step {step} in {op}")]
    NonFinite { step: usize, op: String },

    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
