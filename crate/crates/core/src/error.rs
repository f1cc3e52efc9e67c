//! Error type shared across the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Mismatched sizes between values that must agree (image vs mask,
    /// feature vs atom dimension, code vs dictionary, ...).
    #[error("dimension error: {0}")]
    Dimension(String),

    /// Not enough data for the requested operation (fewer descriptors than
    /// dictionary atoms, empty manifest category, ...).
    #[error("capacity error: {0}")]
    Capacity(String),

    /// Training data unusable as given (single-class SVM input, no positive
    /// ground truth for a recall metric, ...).
    #[error("degenerate data: {0}")]
    Degenerate(String),

    /// Malformed external input: manifests, config files, images.
    #[error("data error: {0}")]
    Data(String),

    /// Model container violations, each reported distinctly.
    #[error("model file: bad magic")]
    ModelMagic,
    #[error("model file: unsupported version {0}")]
    ModelVersion(u32),
    #[error("model file: checksum mismatch")]
    ModelCrc,
    #[error("model file: {0}")]
    ModelFormat(String),

    /// Numerical failure (singular system where one must not occur).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// Command-line usage error.
    #[error("usage: {0}")]
    Usage(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code: 1 usage, 2 data/format, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Usage(_) => 1,
            Error::Numeric(_) => 3,
            _ => 2,
        }
    }
}
