use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch at {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: [usize; 4],
        actual: [usize; 4],
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("graph state error: {0}")]
    GraphState(String),
    #[error("non-finite value in parameter '{0}'")]
    NonFinite(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("checkpoint format error: {0}")]
    CheckpointFormat(String),
    #[error("annotation parse error at line {line}: {message}")]
    AnnotationParse { line: usize, message: String },
    #[error("unsupported image: {0}")]
    UnsupportedImage(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
