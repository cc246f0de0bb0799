use std::path::PathBuf;

#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("{path}: column `{column}` not found in header")]
    MissingColumn { path: PathBuf, column: String },
    #[error("{path}: row {row}, column `{column}`: `{value}` is not a number")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("{path}: {message}")]
    Malformed { path: PathBuf, message: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] cplab_core::Error),
}

impl LabError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        LabError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn csv(path: impl Into<PathBuf>, source: csv::Error) -> Self {
        LabError::Csv {
            path: path.into(),
            source,
        }
    }

    /// Whether the error stems from user configuration rather than execution.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            LabError::Config(_) | LabError::MissingFile(_) | LabError::MissingColumn { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
