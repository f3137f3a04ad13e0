use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("matrix is not symmetric positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("network generation failed after {attempts} attempts: {reason}")]
    RetryCapExceeded { attempts: usize, reason: String },

    #[error("saddlepoint solver did not converge for x = {x} after {iterations} iterations")]
    SaddlepointNonConvergence { x: f64, iterations: usize },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse error classes, used by the command-line front end to pick an
/// exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Io,
    Numeric,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 1,
            ErrorCategory::Io => 2,
            ErrorCategory::Numeric => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Io => "io",
            ErrorCategory::Numeric => "numeric",
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::InvalidParameter(_) | Error::DimensionMismatch { .. } | Error::Parse { .. } => {
                ErrorCategory::Config
            }
            Error::Io { .. } => ErrorCategory::Io,
            Error::NotPositiveDefinite(_)
            | Error::Degenerate(_)
            | Error::RetryCapExceeded { .. }
            | Error::SaddlepointNonConvergence { .. } => ErrorCategory::Numeric,
        }
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
