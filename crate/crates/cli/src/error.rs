use thiserror::Error;
use weak_disentangle::Error as CoreError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] CoreError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{0}")]
    Data(String),

    #[error("image: {0}")]
    Image(#[from] image::ImageError),

    #[error("{0}")]
    Io(#[from] std::io::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type CliResult<T> = Result<T, CliError>;

impl CliError {
    /// 2 for configuration errors, 3 for data errors, 4 for numeric failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) | CliError::Image(_) | CliError::Io(_) | CliError::Json(_) => 3,
            CliError::Core(e) => match e {
                CoreError::UnknownPreset(_)
                | CoreError::InvalidSpace(_)
                | CoreError::UnknownValue { .. }
                | CoreError::IndexOutOfRange { .. }
                | CoreError::InvalidPreState { .. }
                | CoreError::UnknownRelation(_)
                | CoreError::Config(_) => 2,
                CoreError::Shape(_)
                | CoreError::InsufficientSamples(_)
                | CoreError::Malformed(_)
                | CoreError::Io(_)
                | CoreError::Csv(_)
                | CoreError::Json(_) => 3,
                CoreError::Numeric(_) => 4,
            },
        }
    }
}
