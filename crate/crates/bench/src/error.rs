use std::path::PathBuf;

use flowis::OpeError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Ope(#[from] OpeError),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Parse { path: PathBuf, message: String },
}

pub type Result<T> = std::result::Result<T, BenchError>;

impl BenchError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        BenchError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 3 for support violations, 2 for invalid input, 1 otherwise.
    pub fn exit_code(&self) -> u8 {
        match self {
            BenchError::Ope(e) if e.is_support_violation() => 3,
            BenchError::Ope(
                OpeError::Validation(_) | OpeError::Config(_) | OpeError::Parse { .. },
            ) => 2,
            BenchError::Config(_) | BenchError::Parse { .. } => 2,
            _ => 1,
        }
    }
}
