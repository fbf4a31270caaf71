use std::io;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum WatError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid sparse vector: {0}")]
    InvalidVector(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("empty test set")]
    EmptyTestSet,

    #[error("dimension {dim} is smaller than the weight vector extent {extent}")]
    DimensionTooSmall { dim: usize, extent: usize },

    #[error("curves are not aligned on the same checkpoints")]
    MisalignedCurves,

    #[error("wilcoxon test needs at least {min} nonzero differences, got {got}")]
    TooFewDifferences { min: usize, got: usize },

    #[error("mismatched inputs: {0}")]
    Mismatch(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = WatError> = std::result::Result<T, E>;
