use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = EshError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum EshError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("shape error: {0}")]
    Shape(String),

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is rank deficient (smallest singular value {0:e})")]
    RankDeficient(f64),

    #[error("linear solve failed: {0}")]
    SolverFailure(String),

    #[error("quantization term vanishes at the initial point ({0:e}); set alpha explicitly")]
    DegenerateAlpha(f64),

    #[error("query has no live anchor among its nearest anchors")]
    DegenerateQuery,

    #[error("unsupported format version {0}")]
    Version(u8),

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("artifact mismatch: {0}")]
    Mismatch(String),
}

impl EshError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EshError::Io {
            path: path.into(),
            source,
        }
    }

    /// Short machine-readable tag used in CLI error JSON.
    pub fn kind(&self) -> &'static str {
        match self {
            EshError::Io { .. } => "io",
            EshError::Parse { .. } => "parse",
            EshError::Shape(_) => "shape",
            EshError::NonFinite { .. } => "non_finite",
            EshError::DimensionMismatch { .. } => "dimension_mismatch",
            EshError::InvalidArgument(_) => "invalid_argument",
            EshError::RankDeficient(_) => "rank_deficient",
            EshError::SolverFailure(_) => "solver_failure",
            EshError::DegenerateAlpha(_) => "degenerate_alpha",
            EshError::DegenerateQuery => "degenerate_query",
            EshError::Version(_) => "version",
            EshError::Corrupt(_) => "corrupt",
            EshError::Mismatch(_) => "mismatch",
        }
    }
}
