//! Error type shared across the crate.

use thiserror::Error;

/// Errors produced by corpus handling, the model, training, scoring and analysis.
#[derive(Debug, Error)]
pub enum CmnError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("duplicate pair_id `{0}`")]
    DuplicatePairId(String),

    #[error("pair `{pair_id}`: {message}")]
    InvalidPair { pair_id: String, message: String },

    #[error("negative sampling requires at least 2 distinct conversations, found {0}")]
    SingleConversation(usize),

    #[error("annotation for pair `{pair_id}` by annotator `{annotator_id}`: {message}")]
    InvalidAnnotation {
        pair_id: String,
        annotator_id: String,
        message: String,
    },

    #[error("need at least {needed} pairs, found {found}")]
    InsufficientPairs { needed: usize, found: usize },

    #[error("empty token sequence for {0}")]
    EmptyTokens(&'static str),

    #[error("token id {id} out of vocabulary (size {vocab_size})")]
    TokenOutOfVocab { id: usize, vocab_size: usize },

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("non-finite loss at step {step}: {details}")]
    NonFiniteLoss { step: usize, details: String },

    #[error("regime mismatch: expected nsp_label {expected}, got {got}")]
    RegimeMismatch { expected: u8, got: u8 },

    #[error("pair `{0}` has no candidate response")]
    MissingCandidate(String),

    #[error("negative set needs at least 2 responses, got {0}")]
    NegativeSetTooSmall(usize),

    #[error("zero variance in `{0}`")]
    ZeroVariance(&'static str),

    #[error("need at least {needed} observations, got {found}")]
    TooFewObservations { needed: usize, found: usize },

    #[error("degenerate marginals: expected agreement is 1 but observed agreement is below 1")]
    DegenerateMarginals,

    #[error("cannot normalize: all values equal")]
    AllValuesEqual,

    #[error("pair ids missing from {origin}: {ids:?}")]
    MissingPairs { origin: &'static str, ids: Vec<String> },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CmnError>;
