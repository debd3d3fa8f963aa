use std::path::{Path, PathBuf};

use surrogate_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage error: {0}")]
    Usage(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("verification failed: {0}")]
    Verification(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

impl HarnessError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// 0 success, 1 verification failure, 2 usage error, 3 I/O error.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Io { .. } => 3,
            HarnessError::Verification(_) => 1,
            HarnessError::Core(e) => match e {
                CoreError::Io { .. } | CoreError::Format(_) | CoreError::Dump(_) => 3,
                CoreError::Config(_) | CoreError::Invalid(_) => 2,
                CoreError::Diverged { .. } | CoreError::Graph(_) => 1,
            },
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
