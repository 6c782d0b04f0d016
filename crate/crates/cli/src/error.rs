use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid experiment spec: {0}")]
    Spec(String),
    #[error(transparent)]
    Core(#[from] jam_core::Error),
    #[error(transparent)]
    Autodiff(#[from] jam_autodiff::AutodiffError),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint format version {found}, this build reads version {expected}")]
    Version { found: u32, expected: u32 },
    #[error("array {array} has shape {found:?}, expected {expected:?}")]
    ShapeMismatch {
        array: String,
        found: (usize, usize),
        expected: (usize, usize),
    },
    #[error("array {array} was saved for a different auction instance")]
    InstanceMismatch { array: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {reason}")]
    Dataset { path: PathBuf, line: usize, reason: String },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Process exit code: 1 invalid spec, 2 numeric failure, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        use jam_core::Error as E;
        match self {
            CliError::Spec(_) => 1,
            CliError::Core(E::InvalidInstance(_) | E::InvalidArgument(_) | E::EmptyTestSet) => 1,
            CliError::Core(_) | CliError::Autodiff(_) => 2,
            _ => 3,
        }
    }
}
