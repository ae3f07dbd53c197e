//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what} in {path}: {detail}")]
    MalformedFile {
        what: &'static str,
        path: PathBuf,
        detail: String,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("dependency parse rejected: {0}")]
    Parse(String),

    /// The question has a recognized shape but the rules cannot place a mask
    /// slot in it (e.g. yes/no questions, which have no answer span).
    #[error("no mask slot for question: {0}")]
    NoMaskSlot(String),

    /// The question matches no conversion rule at all.
    #[error("unsupported question shape: {0}")]
    UnsupportedQuestion(String),

    #[error("language model adapter: {0}")]
    LanguageModel(String),

    #[error("encoder adapter: {0}")]
    Encoder(String),

    /// A parameter enumeration carried an entry without a kind tag; selection
    /// fails closed rather than guessing what is safe to train.
    #[error("untagged parameter {0:?}: refusing to build a trainable selection")]
    UntaggedParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("cache error: {0}")]
    Cache(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn malformed(what: &'static str, path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::MalformedFile {
            what,
            path: path.into(),
            detail: detail.into(),
        }
    }
}
