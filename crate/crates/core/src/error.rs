use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("line {line}: duplicate record id {id:?}")]
    DuplicateId { line: usize, id: String },

    #[error("record {id:?}: similarity shape mismatch: {message}")]
    SimilarityShape { id: String, message: String },

    #[error("record {id:?}: sample {sample} has no text and no similarity matrix is present")]
    MissingText { id: String, sample: usize },

    #[error("record {id:?}: {message}")]
    InvalidRecord { id: String, message: String },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("record {id:?}: precomputed similarity ({i}, {j}) = {stored} disagrees with recomputed {computed}")]
    InconsistentSimilarity {
        id: String,
        i: usize,
        j: usize,
        stored: f64,
        computed: f64,
    },

    #[error("token sequence has {len} tokens, limit is {limit}")]
    SequenceTooLong { len: usize, limit: usize },

    #[error("record {id:?} has {available} samples but k_max = {k_max}")]
    InsufficientSamples {
        id: String,
        available: usize,
        k_max: usize,
    },

    #[error("record {id:?}: similarity required for rejection but unavailable")]
    SimilarityUnavailable { id: String },

    #[error("record {id:?}: sample {sample} carries no components")]
    MissingComponents { id: String, sample: usize },

    #[error("index {index} out of range (length {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("conservative admissions violate A-bar <= A: {0}")]
    NotConservative(String),

    #[error("failed to serialize: {0}")]
    Serialize(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(message: impl Into<String>) -> Self {
        Error::InvalidArgument(message.into())
    }
}
