use std::path::PathBuf;

use crate::solver::TraceRow;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("inconsistent relevance for pair ({a}, {b}): both +1 and -1 given")]
    InconsistentRelevance { a: usize, b: usize },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    /// The augmented Lagrangian became non-finite; the trace up to that point is kept.
    #[error("solver diverged at outer iteration {iteration}")]
    Diverged {
        iteration: usize,
        trace: Vec<TraceRow>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("model file version mismatch: file has version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },

    #[error("corrupt model file: {0}")]
    Corrupt(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
