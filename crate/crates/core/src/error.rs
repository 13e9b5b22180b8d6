use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic at byte 0: expected {expected:?}, found {found:?}")]
    BadMagic { expected: String, found: String },

    #[error("unsupported {what} {found} at byte {offset} (expected {expected})")]
    BadHeader {
        what: &'static str,
        offset: usize,
        found: u64,
        expected: u64,
    },

    #[error("truncated payload at byte {offset}: need {needed} bytes, file has {available}")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },

    #[error("non-finite sample {value} at byte {offset}")]
    NonFinite { offset: usize, value: f32 },

    #[error("invalid class code {code} at row {row}, col {col} (byte {offset})")]
    InvalidClass {
        code: u8,
        row: usize,
        col: usize,
        offset: usize,
    },

    #[error("invalid dimensions: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("reflection undefined for index {index} on extent {extent}")]
    Reflection { index: isize, extent: usize },

    #[error("K = {k} requires more than {n} points")]
    TooFewPoints { k: usize, n: usize },

    #[error("jacobi preconditioner needs a positive diagonal, row {row} has {value}")]
    NonPositiveDiagonal { row: usize, value: f64 },

    #[error("lanczos did not converge after {iterations} steps; worst residual estimate {worst_residual:e}")]
    LanczosNoConvergence {
        iterations: usize,
        residuals: Vec<f64>,
        worst_residual: f64,
    },

    #[error("no labeled nodes")]
    NoLabels,

    #[error("no labelable (non-ignore) nodes")]
    NothingToLabel,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
