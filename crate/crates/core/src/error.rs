use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("unknown token id {id} (vocabulary size {vocab_size})")]
    UnknownToken { id: usize, vocab_size: usize },
    #[error("sequence length {len} exceeds max_seq {max}")]
    Overlength { len: usize, max: usize },
    #[error("prompt does not end with the SEP token")]
    MissingSep,
    #[error("malformed data: {0}")]
    Format(String),
    #[error("checkpoint hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("steering vector at layer {0} is zero")]
    ZeroVector(usize),
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("no periodicity above the noise floor")]
    NoPeriodicity,
    #[error("audio is silent")]
    Silent,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short stable identifier, used by the CLI's one-line error output.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Shape(_) => "shape",
            Error::NonFinite(_) => "non_finite",
            Error::Invalid(_) => "invalid",
            Error::UnknownToken { .. } => "unknown_token",
            Error::Overlength { .. } => "overlength",
            Error::MissingSep => "missing_sep",
            Error::Format(_) => "format",
            Error::HashMismatch { .. } => "hash_mismatch",
            Error::ZeroVector(_) => "zero_vector",
            Error::Degenerate(_) => "degenerate",
            Error::NoPeriodicity => "no_periodicity",
            Error::Silent => "silent",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
