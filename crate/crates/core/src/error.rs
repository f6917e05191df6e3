use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("machine index {index} out of range for {machines} machines")]
    MachineIndex { index: usize, machines: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("curvature matrix for machine {machine} is not symmetric PSD (min eigenvalue {min_eig:e})")]
    NotPsd { machine: usize, min_eig: f64 },

    #[error("degenerate problem: {0}")]
    Degenerate(String),

    #[error("{what} did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("invalid run configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid value for `{field}`: {message}")]
    Field { field: String, message: String },

    #[error("learning rate undefined: {0}")]
    LearningRate(String),

    #[error("every grid point diverged (grid {grid:?})")]
    AllDiverged { grid: Vec<f64> },

    #[error("unknown method `{0}`")]
    UnknownMethod(String),

    #[error("IDX format error: expected magic {expected}, found {actual}")]
    IdxMagic { expected: u32, actual: u32 },

    #[error("IDX payload truncated: need {needed} bytes, have {available}")]
    IdxTruncated { needed: usize, available: usize },

    #[error("trajectory has no recorded gradients (run with diagnostics enabled)")]
    MissingGradients,

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn field(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Field {
            field: field.into(),
            message: message.into(),
        }
    }
}
