use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid length: {0}")]
    InvalidLength(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("insufficient captions: need {needed} {kind} captions, found {found}")]
    InsufficientCaptions {
        kind: &'static str,
        needed: usize,
        found: usize,
    },

    #[error("caption integration failed for prompt {prompt:?}: {message}")]
    Integration { prompt: String, message: String },

    #[error("corrupt corpus: clip {clip_id}: {message}")]
    CorruptCorpus { clip_id: String, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid token id {id} (vocabulary size {vocab_size})")]
    InvalidToken { id: u32, vocab_size: usize },

    #[error("group {group} requires missing modality {modality}")]
    MissingModality { group: String, modality: String },

    #[error("group {group} requires missing caption variant {variant}")]
    MissingCaption { group: String, variant: String },

    #[error("insufficient batch: hard negative mining needs at least 2 items, got {0}")]
    InsufficientBatch(usize),

    #[error("no maskable token in sequence")]
    NoMaskableToken,

    #[error("non-finite loss in component {component}")]
    NonFinite { component: String },

    #[error("non-finite loss at step {step} in component {component}")]
    NumericalAbort { step: usize, component: String },

    #[error("empty gallery")]
    EmptyGallery,

    #[error("invalid ground truth: id {0} not in ranked list")]
    InvalidGroundTruth(usize),

    #[error("empty question")]
    EmptyQuestion,

    #[error("format error: {0}")]
    Format(String),

    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numerical abort, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InsufficientBatch(_) => 2,
            Error::NonFinite { .. } | Error::NumericalAbort { .. } => 4,
            Error::CorruptCorpus { .. }
            | Error::EmptyCorpus
            | Error::Io { .. }
            | Error::Json(_)
            | Error::InvalidToken { .. }
            | Error::InsufficientCaptions { .. }
            | Error::MissingCaption { .. }
            | Error::MissingModality { .. }
            | Error::EmptyInput(_)
            | Error::InvalidGroundTruth(_)
            | Error::EmptyGallery
            | Error::EmptyQuestion
            | Error::NoMaskableToken
            | Error::Format(_) => 3,
            _ => 1,
        }
    }
}
