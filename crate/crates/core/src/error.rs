use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid graph {id}: {message}")]
    Validation { id: String, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("numeric fault in {op}: non-finite value")]
    NumericFault { op: String },

    #[error("loss is not connected to any parameter")]
    NoGraph,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("degenerate label range: all labels equal {0}")]
    DegenerateRange(f64),

    #[error("need at least {needed} environments, got {got}")]
    InsufficientEnvironments { needed: usize, got: usize },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("unsupported dataset: {0}")]
    Unsupported(String),

    #[error("runs are not comparable: {0}")]
    Incomparable(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 1 usage/config, 2 data validation, 3 numeric fault.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_)
            | Error::Shape(_)
            | Error::Checkpoint(_)
            | Error::Incomparable(_)
            | Error::InsufficientEnvironments { .. } => 1,
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Empty(_)
            | Error::DegenerateRange(_)
            | Error::Unsupported(_) => 2,
            Error::NumericFault { .. } | Error::NoGraph => 3,
        }
    }
}
