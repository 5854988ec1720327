use std::path::PathBuf;

use thiserror::Error;

/// Layer coordinates attached to estimator failures raised inside a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerCoord {
    pub block: usize,
    pub layer: usize,
}

impl std::fmt::Display for LayerCoord {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "block {} layer {}", self.block, self.layer)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value produced by {op}")]
    NonFinite { op: &'static str },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("insufficient samples: need at least 2, got {got}")]
    InsufficientSamples { got: usize },

    #[error(
        "degenerate samples: zero k-th neighbour distance at rows {rows:?}{}",
        .at.map(|c| format!(" ({c})")).unwrap_or_default()
    )]
    DegenerateSamples {
        rows: Vec<usize>,
        at: Option<LayerCoord>,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("insufficient calibration: need at least 2 breakdowns, got {got}")]
    InsufficientCalibration { got: usize },

    #[error("percent delta undefined for zero reference")]
    UndefinedDelta,

    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("training aborted at epoch {epoch} step {step}: {message}")]
    TrainingDiverged {
        epoch: usize,
        step: usize,
        message: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Attach block/layer coordinates to a degenerate-sample error.
    pub(crate) fn at_layer(self, block: usize, layer: usize) -> Self {
        match self {
            Error::DegenerateSamples { rows, at: None } => Error::DegenerateSamples {
                rows,
                at: Some(LayerCoord { block, layer }),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
