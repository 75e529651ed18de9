use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: malformed record: {reason}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{context}: unit id out of range ({id} >= {vocab_size})")]
    UnitOutOfRange {
        context: String,
        id: u32,
        vocab_size: u32,
    },

    #[error("{context}: empty sentence")]
    EmptySentence { context: String },

    #[error("story {story_id} ({lang}): non-contiguous sentence index, expected {expected} found {found}")]
    NonContiguousIndex {
        story_id: String,
        lang: String,
        expected: u32,
        found: u32,
    },

    #[error("missing alignment target: story {story_id} has no {lang} version")]
    MissingAlignmentTarget { story_id: String, lang: String },

    #[error("manifest inconsistent: {0}")]
    Manifest(String),

    #[error("invalid alignment pair: {0}")]
    InvalidPair(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("vocabulary capacity exceeded: {needed} ids needed, vocabulary has {available}")]
    VocabCapacity { needed: u64, available: u32 },

    #[error("not enough stories: {0}")]
    InsufficientStories(String),

    #[error("no reserved unit ids available for nonce construction")]
    NoReservedIds,

    #[error("input of length {len} exceeds context window {context_len}")]
    Overlong { len: usize, context_len: usize },

    #[error("token id {id} outside model vocabulary of {vocab_size}")]
    TokenOutOfRange { id: u32, vocab_size: usize },

    #[error("all target positions are masked")]
    AllMasked,

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite gradient in tensor {tensor} at element {index}")]
    NonFiniteGradient { tensor: String, index: usize },

    #[error("step {step} outside schedule range 1..={total}")]
    StepOutOfRange { step: u64, total: u64 },

    #[error("token budget mismatch: {0}")]
    BudgetMismatch(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("run directory {0} is locked by another command")]
    Locked(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used by the CLI to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_)
            | Error::VocabCapacity { .. }
            | Error::NoReservedIds
            | Error::StepOutOfRange { .. } => ErrorClass::Config,
            Error::NonFiniteGradient { .. } | Error::BudgetMismatch(_) => ErrorClass::Numeric,
            Error::Io { .. } | Error::Locked(_) => ErrorClass::Io,
            _ => ErrorClass::Data,
        }
    }
}
