use std::path::PathBuf;

use thiserror::Error;

use crate::dataset::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{}: {error}", .path.display())]
    Io { path: PathBuf, error: std::io::Error },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("invalid schema: {0}")]
    Schema(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    /// The table failed validation; the first violation is shown, all are kept.
    #[error(
        "invalid table: {} violation(s), first: {}",
        .0.len(),
        .0.first().map(ToString::to_string).unwrap_or_default()
    )]
    InvalidTable(Vec<Violation>),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("design matrix is rank deficient (rank {rank} < {columns} columns)")]
    RankDeficient { rank: usize, columns: usize },

    #[error("column mismatch: expected {expected} columns, got {got}")]
    ColumnMismatch { expected: usize, got: usize },

    #[error("model did not converge: {0}")]
    NotConverged(String),

    #[error("matching error: {0}")]
    Matching(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("bootstrap failed: {dropped} of {requested} replicates dropped (limit 5%)")]
    Bootstrap { dropped: usize, requested: usize },

    #[error("invalid scenario: {0}")]
    Scenario(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, error: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            error,
        }
    }
}
