use thiserror::Error;

/// Errors produced by the fusion engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid value: {0}")]
    InvalidValue(String),

    /// Semantic configuration error tied to a specific key.
    #[error("invalid value for `{key}`: {reason}")]
    Config { key: String, reason: String },

    /// Configuration syntax error with a 1-based line number.
    #[error("line {line}: {reason}")]
    Syntax { line: usize, reason: String },

    #[error("missing required key: {0}")]
    MissingKey(String),

    #[error("line {line}: unknown key `{key}` in section [{section}]")]
    UnknownKey { line: usize, section: String, key: String },

    #[error("invalid passing structure: {0}")]
    Structure(String),

    #[error("filter cache does not match the request features")]
    CacheMismatch,

    #[error("mean-field state does not match: {0}")]
    StaleState(String),

    #[error("problem too large for dense solve: n = {n}, limit = {limit}")]
    TooLarge { n: usize, limit: usize },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("no valid pixels after masking")]
    NoValidPixels,
}

pub type Result<T> = std::result::Result<T, Error>;
