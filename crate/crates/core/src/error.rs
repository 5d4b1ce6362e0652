use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("rank-deficient regression basis: {0}")]
    RankDeficient(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse { line: u64, column: String, message: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error("model evaluation failed at trajectory {trajectory}, step {step}: {source}")]
    Evaluation {
        trajectory: usize,
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// True for errors caused by malformed input files.
    pub fn is_data_error(&self) -> bool {
        matches!(self, Error::Parse { .. } | Error::Format(_) | Error::Json(_) | Error::NonFinite(_))
    }

    /// True for numerical failures (factorization, optimizer).
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NotPositiveDefinite(_) | Error::RankDeficient(_) | Error::FitFailed(_))
    }
}
