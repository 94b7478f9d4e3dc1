use thiserror::Error;

/// Errors produced by the matting pipeline.
#[derive(Debug, Error)]
pub enum OtvmError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid dilation kernel {0}: must be odd and at least 1")]
    InvalidKernel(usize),
    #[error("invalid trimap: {0}")]
    InvalidTrimap(String),
    #[error("unknown trimap setting `{0}` (expected narrow, medium or wide)")]
    UnknownSetting(String),
    #[error("memory bank is empty")]
    EmptyBank,
    #[error("empty frame sequence")]
    EmptySequence,
    #[error("missing input: {0}")]
    MissingInput(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, OtvmError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(OtvmError::Shape(msg.into()))
}
