use std::path::{Path, PathBuf};

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("training diverged at epoch {epoch}, step {step}: {what}")]
    Divergence { epoch: usize, step: usize, what: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image codec: {0}")]
    Image(#[from] image::ImageError),

    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("checksum mismatch for {path}: expected {expected}, found {found}")]
    Checksum { path: PathBuf, expected: String, found: String },

    #[error("insufficient inputs: need {need}, have {have}")]
    Insufficient { need: usize, have: usize },

    #[error("network ({}): {msg}", if *.transient { "transient" } else { "permanent" })]
    Network { transient: bool, msg: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Error::Io { path: path.to_path_buf(), source }
    }

    pub fn format(path: &Path, msg: impl ToString) -> Self {
        Error::Format { path: path.to_path_buf(), msg: msg.to_string() }
    }

    pub fn is_divergence(&self) -> bool {
        matches!(self, Error::Divergence { .. })
    }
}
