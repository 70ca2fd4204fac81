use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition of an operation was not met by its caller.
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("unreachable: {0}")]
    Unreachable(String),

    #[error("infeasible world: {0}")]
    InfeasibleWorld(String),

    #[error("undefined: {0}")]
    Undefined(String),

    #[error("non-finite loss at update {update}, minibatch {minibatch}")]
    NonFiniteLoss { update: usize, minibatch: usize },

    #[error("worker {worker}: {source}")]
    Worker {
        worker: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("invalid checkpoint: {0}")]
    Checkpoint(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
