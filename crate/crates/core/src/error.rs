use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Configuration rejected during validation. `field` is a dotted path
    /// into the config document.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("source `{source_id}` not found at {}", path.display())]
    SourceNotFound { source_id: String, path: PathBuf },

    #[error("source `{source_id}` record {ordinal}: {message}")]
    Record {
        source_id: String,
        ordinal: u64,
        message: String,
    },

    #[error("line {line}: {message}")]
    Load { line: usize, message: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("group {0:?} has more than two members; shipped matchers compare pairs only")]
    UnsupportedGroup(Vec<String>),

    #[error("profile `{0}` is not a merged profile")]
    UnsupportedRepresentation(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("conflict: {0}")]
    Conflict(String),

    #[error("store error: {0}")]
    Store(String),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub(crate) fn in_stage(self, stage: &'static str) -> Self {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        }
    }

    /// Unwraps stage wrappers down to the originating error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }

    pub fn is_config(&self) -> bool {
        matches!(self.root(), Error::Config { .. })
    }
}
