use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: feature has {found} dimensions, expected {expected}")]
    DimensionMismatch {
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate record id {0:?}")]
    DuplicateId(String),

    #[error("line {line}: unknown predicate {name:?}")]
    UnknownPredicate { line: usize, name: String },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid vocabulary: {0}")]
    InvalidVocab(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error("model file: {0}")]
    ModelFormat(String),

    #[error("training diverged: non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Whether the error stems from bad input or configuration rather than a
    /// failure while computing.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::NonFiniteLoss { .. } | Error::Io { .. } => false,
            Error::Stage { source, .. } => source.is_validation(),
            _ => true,
        }
    }
}
