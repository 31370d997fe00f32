use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("missing column `{0}`")]
    MissingColumn(String),
    #[error("malformed row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("row {row}: value `{value}` of label `{label}` does not map to 0 or 1")]
    UnmappableLabelValue {
        row: usize,
        label: String,
        value: String,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("stream has no upstream tasks")]
    EmptyStream,
    #[error("fixed order names unknown task `{0}`")]
    UnknownTaskInFixedOrder(String),
    #[error("task `{0}` appears more than once")]
    DuplicateTask(String),
    #[error("fixed order omits upstream tasks: {0:?}")]
    IncompleteFixedOrder(Vec<String>),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("input is empty")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("loss evaluated to a non-finite value")]
    NonFiniteLoss,
    #[error("task `{0}` has no training texts")]
    EmptyTask(String),
    #[error("task `{0}` has a single-class training split")]
    DegenerateLabels(String),
    #[error("snapshot is incompatible: {0}")]
    IncompatibleSnapshot(String),
    #[error("AUC needs at least one positive and one negative example")]
    SingleClass,
    #[error("missing artifact: {0}")]
    MissingArtifact(String),
    #[error("task coverage differs; missing tasks: {missing:?}")]
    CoverageMismatch { missing: Vec<String> },
    #[error(
        "run `{run_id}` was created from a different configuration (hash {stored}, now {current})"
    )]
    ResumeMismatch {
        run_id: String,
        stored: String,
        current: String,
    },
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
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dims(expected: usize, found: usize) -> Self {
        Error::DimensionMismatch { expected, found }
    }

    /// True for errors caused by user input rather than internal failures.
    pub fn is_user_error(&self) -> bool {
        match self {
            Error::Io { source, .. } => matches!(
                source.kind(),
                std::io::ErrorKind::NotFound | std::io::ErrorKind::PermissionDenied
            ),
            Error::NonFiniteLoss => false,
            _ => true,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn ensure_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::dims(expected, found))
    }
}
