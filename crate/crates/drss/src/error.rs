use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DrssError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("data: {0}")]
    Data(String),
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },
    #[error(transparent)]
    Core(#[from] drss_core::Error),
}

pub type Result<T, E = DrssError> = std::result::Result<T, E>;

impl DrssError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        DrssError::Io { path: path.to_path_buf(), source }
    }

    pub fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        DrssError::Parse { path: path.to_path_buf(), line, message: message.into() }
    }

    pub fn checkpoint(path: &Path, message: impl Into<String>) -> Self {
        DrssError::Checkpoint { path: path.to_path_buf(), message: message.into() }
    }

    /// Process exit status: 2 usage or configuration, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        use drss_core::Error as C;
        match self {
            DrssError::Usage(_) => 2,
            DrssError::Io { .. } | DrssError::Parse { .. } | DrssError::Data(_) | DrssError::Checkpoint { .. } => 3,
            DrssError::Core(C::Config(_)) => 2,
            DrssError::Core(C::NonFinite { .. } | C::NotPsd { .. } | C::NotSymmetric { .. }) => 4,
            DrssError::Core(_) => 3,
        }
    }

    /// Short machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self.exit_code() {
            2 => "usage",
            4 => "numeric",
            _ => "data",
        }
    }
}
