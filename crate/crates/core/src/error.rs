use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("annotation error: {0}")]
    Annotation(String),

    #[error(
        "privacy budget exceeded: charge of {requested} would raise the total to {would_be} \
         against a limit of {limit}"
    )]
    BudgetExceeded {
        requested: f64,
        would_be: f64,
        limit: f64,
    },

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("zero pooled variance")]
    ZeroVariance,

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("training diverged at epoch {epoch}: loss rose from {previous} to {current}")]
    Diverged {
        epoch: usize,
        previous: f64,
        current: f64,
    },

    #[error("corrupt record at line {line}: {message}")]
    CorruptLine { line: usize, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
