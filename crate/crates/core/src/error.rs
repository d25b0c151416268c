use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("tensor error: {0}")]
    Tensor(#[from] candle_core::Error),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("non-finite value in frame {frame}")]
    NonFinite { frame: usize },

    #[error("expected a window of {expected} frames, got {actual}")]
    WindowLength { expected: usize, actual: usize },

    #[error("index {index} out of range for {what} of size {size}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        size: usize,
    },

    #[error("codebook is empty")]
    EmptyCodebook,

    #[error("unbalanced marker: {span} span is not closed")]
    UnbalancedMarker { span: String },

    #[error("malformed prompt: {0}")]
    MalformedPrompt(String),

    #[error("{stage} diverged at step {step}: {detail}")]
    Divergence {
        stage: &'static str,
        step: usize,
        detail: String,
    },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("stage `{stage}` is missing its input {}", path.display())]
    MissingInput { stage: String, path: PathBuf },

    #[error("incompatible checkpoint: {0}")]
    Incompatible(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }
}
