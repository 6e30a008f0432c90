use thiserror::Error;

/// Errors raised by the regression engine.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Invalid model, data or run configuration.
    #[error("config error: {0}")]
    Config(String),

    /// A computation produced non-finite values or a matrix could not be factorized.
    #[error("numerical error: {message}")]
    Numerical {
        message: String,
        /// Offending observation, when the failure can be pinned to one.
        row: Option<usize>,
    },

    /// An operation was called on an object in an unusable state (e.g. an empty chain).
    #[error("state error: {0}")]
    State(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>, row: Option<usize>) -> Self {
        Error::Numerical { message: msg.into(), row }
    }

    /// Process exit code used by the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical { .. } => 3,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
