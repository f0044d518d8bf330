use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),

    #[error("invalid factor space: {0}")]
    InvalidSpace(String),

    #[error("unknown value `{value}` for factor `{factor}`")]
    UnknownValue { factor: String, value: String },

    #[error("combination index {index} out of range (N = {n})")]
    IndexOutOfRange { index: usize, n: usize },

    #[error("relation `{relation}` is not defined on input {inputs:?}")]
    InvalidPreState { relation: String, inputs: Vec<usize> },

    #[error("unknown relation `{0}`")]
    UnknownRelation(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("insufficient samples: {0}")]
    InsufficientSamples(String),

    #[error("malformed archive: {0}")]
    Malformed(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
