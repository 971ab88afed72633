//! Error taxonomy shared by every module.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An API precondition was violated (shape mismatch, invalid operand).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A configuration value is outside its allowed domain.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerics went bad (NaN gradients, failed gradient check).
    #[error("numeric failure: {0}")]
    Numeric(String),

    /// A file does not conform to one of the on-disk formats.
    #[error("format error: {0}")]
    Format(String),

    /// A file is in a recognized format but a newer/older version.
    #[error("unsupported version {found} (this build reads version {expected}); upgrade required")]
    UnsupportedVersion { found: u32, expected: u32 },

    /// Checksum mismatch: the file bytes were altered after writing.
    #[error("corrupted file: {0}")]
    Corrupted(String),

    /// A synthesis draw produced geometry outside the usable frame.
    #[error("rejected sample: {0}")]
    RejectedSample(String),

    #[error("I/O error at {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for the CLI: 1 usage, 2 I/O, 3 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config(_) | Error::RejectedSample(_) => 1,
            Error::Format(_)
            | Error::UnsupportedVersion { .. }
            | Error::Corrupted(_)
            | Error::Io { .. }
            | Error::Json(_) => 2,
            Error::Numeric(_) => 3,
        }
    }
}
