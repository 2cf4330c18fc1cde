use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: no samples")]
    NoSamples { path: PathBuf },
    #[error("{path}:{line}: non-numeric cell {value:?} in column {column:?}")]
    NonNumeric {
        path: PathBuf,
        line: usize,
        column: String,
        value: String,
    },
    #[error("{path}:{line}: negative value {value} in column {column:?}")]
    NegativeValue {
        path: PathBuf,
        line: usize,
        column: String,
        value: f64,
    },
    #[error("{path}:{line}: value {value} in column {column:?} is outside [0, 1]")]
    OutOfRange {
        path: PathBuf,
        line: usize,
        column: String,
        value: f64,
    },
    #[error("{path}: duplicate feature name {name:?}")]
    DuplicateFeature { path: PathBuf, name: String },
    #[error("missing label for sample {sample:?}")]
    MissingLabel { sample: String },
    #[error("{path}:{line}: malformed record: {reason}")]
    Malformed {
        path: PathBuf,
        line: usize,
        reason: String,
    },
    #[error("invalid table: {0}")]
    InvalidTable(String),
    #[error("empty histogram")]
    EmptyHistogram,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    ShapeMismatch { expected: Vec<usize>, got: Vec<usize> },
    #[error("zero variance point set")]
    ZeroVariance,
    #[error("corrupt image: {0}")]
    CorruptImage(String),
    #[error("corrupt weight file: {0}")]
    CorruptWeights(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("leakage guard: {0}")]
    Leakage(String),
    #[error("feature mismatch: {0}")]
    FeatureMismatch(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("png error: {0}")]
    Png(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from input data rather than configuration or numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::NoSamples { .. }
                | Error::NonNumeric { .. }
                | Error::NegativeValue { .. }
                | Error::OutOfRange { .. }
                | Error::DuplicateFeature { .. }
                | Error::MissingLabel { .. }
                | Error::Malformed { .. }
                | Error::InvalidTable(_)
                | Error::EmptyHistogram
                | Error::CorruptImage(_)
                | Error::CorruptWeights(_)
                | Error::FeatureMismatch(_)
                | Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Png(_)
        )
    }
}
