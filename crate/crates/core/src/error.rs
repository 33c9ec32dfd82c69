//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("corpus record at line {line}: {message}")]
    Record { line: usize, message: String },

    #[error("unknown sense label {value:?} at line {line}; legal labels are Comparison, Contingency, Expansion, Temporal")]
    UnknownSense { value: String, line: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("answer word {word:?} is not a single token (pieces: {pieces:?})")]
    MultiTokenAnswerWord { word: String, pieces: Vec<String> },

    #[error("surface {0:?} is not in the answer space")]
    NotInAnswerSpace(String),

    #[error("special token {0:?} is already registered")]
    DuplicateSpecialToken(String),

    #[error("token id {id} out of range for vocabulary of size {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("prompt of {length} tokens exceeds the configured maximum of {max}")]
    PromptOverflow { length: usize, max: usize },

    #[error("non-finite loss in epoch {epoch}, batch {batch}: {detail}")]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        detail: String,
    },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("checkpoint was trained for variant {found} but {requested} was requested")]
    VariantMismatch { requested: String, found: String },

    #[error("{0}")]
    Other(String),
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad configuration or input files rather
    /// than runtime failures. The CLI maps these to a distinct exit code.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Record { .. }
                | Error::UnknownSense { .. }
                | Error::MultiTokenAnswerWord { .. }
                | Error::DuplicateSpecialToken(_)
                | Error::VariantMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
