use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("insufficient points for three components")]
    InsufficientPoints,

    #[error("degenerate coordinate {0}: zero empirical variance")]
    DegenerateCoordinate(usize),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite activation at layer {layer}")]
    NonFiniteLayer { layer: usize },

    #[error("null probe: adversarial point coincides with the input")]
    NullProbe,

    #[error("singular covariance")]
    SingularCovariance,

    #[error("fixed-point descent did not converge after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("training diverged at iteration {iteration}: {detail}")]
    Divergence {
        iteration: usize,
        detail: String,
        /// Last parameters before the failing update, when training produced any.
        last_good: Option<Box<crate::score_model::Checkpoint>>,
    },

    #[error("k = {k} must be smaller than the number of points {count}")]
    TooFewPoints { k: usize, count: usize },

    #[error("every point was excluded from the estimate")]
    AllPointsExcluded,

    #[error("empty input")]
    Empty,

    #[error("malformed {what}: {detail}")]
    Format { what: &'static str, detail: String },

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("refusing to overwrite {0} (use --force)")]
    WouldOverwrite(PathBuf),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(what: &'static str, detail: impl Into<String>) -> Self {
        Error::Format {
            what,
            detail: detail.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
