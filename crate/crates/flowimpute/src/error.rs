//! Crate-wide error type.

pub type Result<T> = std::result::Result<T, Error>;

/// Rough classification used by callers that map errors onto process exit
/// codes: bad arguments, bad data, or a numerical failure during computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: produced a non-finite value{}", fmt_detail(.detail))]
    NonFinite { op: String, detail: String },

    #[error("{op}: shape mismatch, expected {expected}, got {got}")]
    ShapeMismatch {
        op: String,
        expected: String,
        got: String,
    },

    #[error("unknown parameter `{0}`")]
    UnknownParam(String),

    #[error("duplicate parameter `{0}`")]
    DuplicateParam(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: expected {expected} columns, got {got}")]
    RaggedRow {
        row: usize,
        expected: usize,
        got: usize,
    },

    #[error("row {row}, column {col}: cannot parse `{token}` as a number")]
    CellParse {
        row: usize,
        col: usize,
        token: String,
    },

    #[error("column {col} has no observed entries; drop it before processing")]
    FullyMissingColumn { col: usize },

    #[error("row {row} has no observed pixels")]
    FullyMissingImage { row: usize },

    #[error("row {row} has no observed entries")]
    FullyMissingRow { row: usize },

    #[error("no missing entries: metric undefined")]
    NoMissingEntries,

    #[error("empty batch")]
    EmptyBatch,

    #[error("observed-block covariance is singular")]
    SingularCovariance,

    #[error("training aborted at epoch {epoch}, batch {batch}: {detail}")]
    TrainingDiverged {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("checkpoint manifest: {0}")]
    Manifest(String),

    #[error("digest mismatch for `{file}`: checkpoint data is corrupted")]
    DigestMismatch { file: String },
}

fn fmt_detail(detail: &str) -> String {
    if detail.is_empty() {
        String::new()
    } else {
        format!(" ({detail})")
    }
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonFinite { .. } | Error::TrainingDiverged { .. } | Error::SingularCovariance => {
                ErrorKind::Numerical
            }
            Error::InvalidArgument(_) => ErrorKind::Usage,
            _ => ErrorKind::Data,
        }
    }
}
