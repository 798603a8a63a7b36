use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value in layer {layer}")]
    Numeric { layer: usize },

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: cannot decode image: {reason}")]
    Decode { path: PathBuf, reason: String },

    #[error("target {target} bpp is below the codec floor of {floor} bpp")]
    BelowRateFloor { target: f64, floor: f64 },

    #[error("out of range: {0}")]
    Range(String),

    #[error("insufficient data: need at least {needed}, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("explained variance undefined: target variance is zero")]
    UndefinedVariance,

    #[error("kernel matrix is not positive definite after jitter {jitter:e}")]
    Conditioning { jitter: f64 },

    #[error("jacobian needs {needed} bytes, budget is {budget}; use a smaller image")]
    Budget { needed: usize, budget: usize },

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("no rung reaches the target; best is rung {best} with lower bound {bound:.3} dB")]
    Infeasible { best: usize, bound: f64 },

    #[error("training diverged: {0}")]
    Training(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
