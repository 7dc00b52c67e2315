use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("invalid {field}: {message}")]
    Invalid { field: &'static str, message: String },

    #[error("unknown type label `{0}`")]
    UnknownLabel(String),

    #[error("marker `{0}` collides with a prompt token")]
    MarkerCollision(String),

    #[error("mention of {mention} tokens cannot fit in {max_len} positions")]
    MentionTooLong { mention: usize, max_len: usize },

    #[error("type `{0}` has no tokens known to the backbone tokenizer")]
    EmptyTypeTokenization(String),

    #[error("vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error("sample size {requested} exceeds filtered pool of {pool} examples")]
    SampleTooLarge { requested: usize, pool: usize },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(field: &'static str, message: impl Into<String>) -> Self {
        Error::Invalid {
            field,
            message: message.into(),
        }
    }
}
