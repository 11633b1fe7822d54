use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// Collects every violation found, not just the first one.
    #[error("validation failed:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),

    #[error("unknown annotator {0:?}")]
    UnknownAnnotator(String),

    #[error("pool has {available} unlabeled pairs but {needed} are required")]
    InsufficientPool { needed: usize, available: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
