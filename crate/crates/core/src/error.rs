use thiserror::Error;

/// Errors raised across the estimator stack.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum OpeError {
    /// Shapes or parameters that do not fit together.
    #[error("configuration error: {0}")]
    Config(String),

    /// Input data violating a documented invariant.
    #[error("validation error: {0}")]
    Validation(String),

    /// The behavior policy gives zero probability to something the target reaches.
    #[error("support violation at {location}: target {target_prob}, behavior {behavior_prob}")]
    SupportViolation {
        location: String,
        target_prob: f64,
        behavior_prob: f64,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A computation whose cost exceeds a configured guard.
    #[error("refused: {what} needs {required}, limit is {limit}")]
    Refused {
        what: String,
        required: String,
        limit: String,
    },

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}

impl OpeError {
    pub fn support(location: impl Into<String>, target_prob: f64, behavior_prob: f64) -> Self {
        OpeError::SupportViolation {
            location: location.into(),
            target_prob,
            behavior_prob,
        }
    }

    pub fn is_support_violation(&self) -> bool {
        matches!(self, OpeError::SupportViolation { .. })
    }
}

pub type Result<T> = std::result::Result<T, OpeError>;
