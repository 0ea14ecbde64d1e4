use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Cholesky failed at the given (1-based) leading minor even after the
    /// full jitter schedule was applied.
    #[error("matrix of dimension {dim} is not positive definite: leading minor {minor} failed after jitter {jitter:e}")]
    NotPositiveDefinite { dim: usize, minor: usize, jitter: f64 },

    #[error("ill-conditioned system: {0}")]
    Conditioning(String),

    #[error("chain {chain} aborted at iteration {iteration}: {source}")]
    ChainAbort {
        chain: usize,
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("not implemented (out of scope): {0}")]
    Unsupported(String),

    #[error("malformed input: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::InvalidParameter(_)
            | Error::Shape(_)
            | Error::Format(_)
            | Error::Io(_)
            | Error::Json(_) => 2,
            Error::NotPositiveDefinite { .. } | Error::Conditioning(_) | Error::ChainAbort { .. } => 3,
            Error::Unsupported(_) => 4,
        }
    }
}
