use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed csv in {path}: {message}")]
    Csv { path: PathBuf, message: String },
    #[error("{file}: missing cell for unit {unit}, time {time}")]
    MissingCell { file: String, unit: String, time: String },
    #[error("{file}: duplicate cell for unit {unit}, time {time}")]
    DuplicateCell { file: String, unit: String, time: String },
    #[error("{file}: non-numeric value {value:?} in column {column} (unit {unit}, time {time})")]
    NonNumericValue { file: String, unit: String, time: String, column: String, value: String },
    #[error("non-finite {what} at ({row}, {col})")]
    NonFinite { what: String, row: usize, col: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid neighborhood: {0}")]
    InvalidNeighborhood(String),
    #[error("matrix is not positive definite (smallest eigenvalue {min_eigenvalue:e}, ridge {ridge:e})")]
    NotPositiveDefinite { min_eigenvalue: f64, ridge: f64 },
    #[error("need at least {need} replicates, got {got}")]
    InsufficientReplicates { got: usize, need: usize },
    #[error("rank {rank} too large for dimension {dim} (requires (d-M)^2 >= d+M)")]
    RankTooLarge { rank: usize, dim: usize },
    #[error("coordinate {index} has zero residual variance")]
    DegenerateColumn { index: usize },
    #[error("mask has {entries} entries, need at least {needed}")]
    MaskTooSmall { entries: usize, needed: usize },
    #[error("cross-fitting fold {fold} has {size} replicates (need >= 2)")]
    FoldTooSmall { fold: usize, size: usize },
    #[error("{failed} of {total} bootstrap resamples failed")]
    BootstrapFailure { failed: usize, total: usize },
    #[error("singular system in {0}")]
    Singular(String),
    #[error("config: {0}")]
    Config(String),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerical pipeline (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite { .. }
                | Error::DegenerateColumn { .. }
                | Error::BootstrapFailure { .. }
                | Error::Singular(_)
        )
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
