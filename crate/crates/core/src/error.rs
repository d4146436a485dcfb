use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: bad IDX magic, expected {expected:#010x}, found {found:#010x}")]
    Format {
        path: PathBuf,
        expected: u32,
        found: u32,
    },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    Length {
        path: PathBuf,
        expected: usize,
        found: usize,
    },
    #[error("image file has {images} entries but label file has {labels}")]
    Consistency { images: usize, labels: usize },
    #[error("class {class}: requested {requested} samples but only {available} are available")]
    Capacity {
        class: usize,
        requested: usize,
        available: usize,
    },
    #[error("invalid dataset: {0}")]
    Dataset(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("cannot transfer parameter {name}: {reason}")]
    Transfer { name: String, reason: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("{phase} diverged at epoch {epoch}: non-finite loss")]
    Divergence { phase: &'static str, epoch: usize },
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("metric {metric} undefined: class {class} has no samples")]
    UndefinedMetric { metric: &'static str, class: usize },
    #[error("label {label} out of range for {classes} classes")]
    Domain { label: usize, classes: usize },
    #[error("no class left to sample after excluding the majority class")]
    EmptySupport,
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("config: {0}")]
    Config(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Self::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<lpgan_autodiff::ShapeError> for Error {
    fn from(e: lpgan_autodiff::ShapeError) -> Self {
        Self::Shape(e.to_string())
    }
}

impl Error {
    /// Process exit status: 2 for configuration errors, 3 for missing input
    /// files, 4 for training divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => 3,
            Error::Divergence { .. } => 4,
            _ => 1,
        }
    }
}
