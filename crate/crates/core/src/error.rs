use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema format error: {0}")]
    SchemaFormat(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("invalid type path {path:?}: {reason}")]
    Path { path: Vec<String>, reason: String },

    #[error("input too long: {0}")]
    InputTooLong(String),

    #[error("vocabulary error: token id {id} outside vocabulary of size {size}")]
    Vocabulary { id: u32, size: usize },

    #[error("target error: {0}")]
    Target(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("numeric error in instance {instance}: {reason}")]
    Numeric { instance: usize, reason: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
