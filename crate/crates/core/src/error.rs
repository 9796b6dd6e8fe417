use thiserror::Error;

/// Every failure the pipeline can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("empty report")]
    EmptyReport,
    #[error("dataset too small: need at least {needed} items, got {got}")]
    DatasetTooSmall { needed: usize, got: usize },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("curve fit failed: {0}")]
    Fit(String),
    #[error("shape error: {0}")]
    Shape(String),
    #[error("numerical failure: {message}")]
    Numerics {
        message: String,
        /// Epoch of the last checkpoint known to hold finite weights.
        last_good_epoch: Option<usize>,
    },
    #[error("label {label} out of range for {k} topics")]
    Label { label: usize, k: usize },
    #[error("prefix length {len} exceeds max_len {max_len}")]
    Length { len: usize, max_len: usize },
    #[error("candidate/reference count mismatch: {candidates} vs {references}")]
    Pairing { candidates: usize, references: usize },
    #[error("degenerate (zero) reference embedding")]
    DegenerateEmbedding,
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("malformed input: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn numerics(message: impl Into<String>) -> Self {
        Error::Numerics {
            message: message.into(),
            last_good_epoch: None,
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        Error::Shape(message.into())
    }

    pub fn config(message: impl Into<String>) -> Self {
        Error::Config(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
