use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}:{line}: coordinate ({row}, {col}) outside {rows}x{cols}", file.display())]
    CoordinateOutOfRange {
        file: PathBuf,
        line: u64,
        row: i64,
        col: i64,
        rows: usize,
        cols: usize,
    },

    #[error("{}:{line}: duplicate coordinate ({row}, {col})", file.display())]
    DuplicateCoordinate {
        file: PathBuf,
        line: u64,
        row: usize,
        col: usize,
    },

    #[error("{}:{line}: value {value:?} at ({row}, {col}) is not binary", file.display())]
    NonBinaryValue {
        file: PathBuf,
        line: u64,
        row: usize,
        col: usize,
        value: String,
    },

    #[error("{}:{line}: {message}", file.display())]
    Parse {
        file: PathBuf,
        line: u64,
        message: String,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("matrix has no elements")]
    EmptyMatrix,

    #[error("statistics need at least one row")]
    NoRows,

    #[error("non-finite activation at layer {layer}, node {node}")]
    NonFinite { layer: usize, node: usize },

    #[error("non-finite gradient in parameter tensor {tensor}")]
    NonFiniteGradient { tensor: String },

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("checkpoint integrity: {0}")]
    Integrity(String),

    #[error("checkpoint format version {found} unsupported (expected {expected})")]
    Version { found: u32, expected: u32 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("input too large for brute force: {0} > {1}")]
    TooLarge(u64, u64),

    #[error("{0}")]
    Other(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
