//! Error taxonomy for the pipeline crate.
//!
//! Variants map onto process exit codes at the CLI boundary: configuration
//! problems (2), missing prerequisites (3), violated run invariants (4), and
//! everything else (1).

use std::path::PathBuf;

use cfx_tensor::TensorError;
use thiserror::Error;

pub type Result<T, E = CoreError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error(transparent)]
    Tensor(#[from] TensorError),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path} at byte {offset}: {what}")]
    Parse {
        path: PathBuf,
        offset: u64,
        what: String,
    },

    #[error("configuration: {0}")]
    Config(String),

    #[error("prerequisite missing: {0}")]
    Prerequisite(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("training diverged: {what} (epoch {epoch}, step {step})")]
    Training {
        what: String,
        epoch: usize,
        step: usize,
    },
}

impl CoreError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CoreError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn parse(path: impl Into<PathBuf>, offset: u64, what: impl Into<String>) -> Self {
        CoreError::Parse {
            path: path.into(),
            offset,
            what: what.into(),
        }
    }

    /// Process exit code this error maps to.
    pub fn exit_code(&self) -> i32 {
        match self {
            CoreError::Config(_) => 2,
            CoreError::Prerequisite(_) => 3,
            CoreError::Invariant(_) => 4,
            _ => 1,
        }
    }
}
