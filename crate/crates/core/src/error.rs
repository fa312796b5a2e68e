use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the engine can report. Variants are grouped so callers
/// (CLI, service, C ABI) can map them onto coarse categories.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector has zero norm")]
    ZeroVector,
    #[error("vector contains a non-finite entry")]
    NonFinite,
    #[error("dimension mismatch: expected {expected}, got {found}{}", location(.line, .index))]
    DimensionMismatch {
        expected: usize,
        found: usize,
        line: Option<usize>,
        index: Option<usize>,
    },
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("duplicate keyword {text:?} in market {market}")]
    DuplicateKeyword { market: String, text: String },
    #[error("embedding set is empty")]
    EmptySet,
    #[error("requested {clusters} clusters but only {points} points are available")]
    TooManyClusters { clusters: usize, points: usize },
    #[error("keyword id {0} has no cluster assignment")]
    UnassignedKeyword(u64),
    #[error("unknown keyword {0:?}")]
    UnknownKeyword(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("invalid quantile {0}: must lie in (0, 1]")]
    InvalidQuantile(f64),
    #[error("degenerate input: {0}")]
    DegenerateInput(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("constraint violation: {0}")]
    ConstraintViolation(String),
    #[error("schema mismatch: expected {expected} features, got {found}")]
    SchemaMismatch { expected: usize, found: usize },
    #[error("no positive pairs: {0}")]
    NoPositivePairs(String),
    #[error("unknown market {0:?}")]
    UnknownMarket(String),
    #[error("dangling reference: {0}")]
    DanglingReference(String),
    #[error("version regression: current {current}, offered {offered}")]
    VersionRegression { current: u64, offered: u64 },
    #[error("no snapshot loaded")]
    NoSnapshot,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("internal error: {0}")]
    Internal(String),
}

fn location(line: &Option<usize>, index: &Option<usize>) -> String {
    match (line, index) {
        (Some(l), _) => format!(" at line {l}"),
        (None, Some(i)) => format!(" at query {i}"),
        (None, None) => String::new(),
    }
}

impl Error {
    pub fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            expected,
            found,
            line: None,
            index: None,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the caller's data or arguments rather
    /// than by the engine itself.
    pub fn is_data_error(&self) -> bool {
        !matches!(self, Error::Internal(_))
    }
}
