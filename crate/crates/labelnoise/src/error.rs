use std::io;
use std::path::PathBuf;

use labelnoise_core::Error as CoreError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: file not found")]
    MissingFile { path: PathBuf },
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: expected {expected} bytes, found {actual}")]
    SizeMismatch { path: PathBuf, expected: u64, actual: u64 },
    #[error("{path}: label {label} at index {index} outside [0, {num_classes})")]
    LabelOutOfRange {
        path: PathBuf,
        index: usize,
        label: i64,
        num_classes: usize,
    },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {source}")]
    Image { path: PathBuf, source: image::ImageError },
    #[error("{failed} of {total} grid cells failed")]
    PartialGrid { failed: usize, total: usize },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        let path = path.into();
        if source.kind() == io::ErrorKind::NotFound {
            Error::MissingFile { path }
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Process exit status: 2 for anything rejected up front, 3 for a run that
    /// diverged, 4 for a grid with failed cells, 1 for IO trouble mid-run.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Core(CoreError::Divergence { .. }) => 3,
            Error::PartialGrid { .. } => 4,
            Error::Io { .. } | Error::Image { .. } => 1,
            _ => 2,
        }
    }
}
