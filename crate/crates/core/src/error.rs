use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("validation error: {0}")]
    Validation(String),

    #[error("dataset format error in {file}{}: {message}", record_suffix(*.sample_id))]
    DatasetFormat {
        file: PathBuf,
        sample_id: Option<u64>,
        message: String,
    },

    #[error("labeling error for sample {sample_id}: {message}")]
    Labeling { sample_id: u64, message: String },

    #[error("checkpoint error in {file}: {message}")]
    Checkpoint { file: PathBuf, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn record_suffix(sample_id: Option<u64>) -> String {
    match sample_id {
        Some(id) => format!(" (sample {id})"),
        None => String::new(),
    }
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(file: impl Into<PathBuf>, sample_id: Option<u64>, message: impl Into<String>) -> Self {
        Error::DatasetFormat {
            file: file.into(),
            sample_id,
            message: message.into(),
        }
    }

    pub fn checkpoint(file: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            file: file.into(),
            message: message.into(),
        }
    }

    /// True for failures of the underlying filesystem, as opposed to bad
    /// content or bad configuration.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. })
    }
}
