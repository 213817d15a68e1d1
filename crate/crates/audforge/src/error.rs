use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("embedding dimension mismatch: {left} vs {right}")]
    DimMismatch { left: usize, right: usize },

    #[error("zero vector has no direction")]
    ZeroVector,

    #[error("empty embedding set")]
    EmptyEmbeddingSet,

    #[error("backend {service}: {message}")]
    Backend {
        service: String,
        message: String,
        retryable: bool,
    },

    #[error("judge reply is not a yes/no answer: {reply:?}")]
    JudgeReply { reply: String },

    #[error("manifest: sample {sample_id} cannot move from {from} to {to}")]
    ManifestRegression {
        sample_id: String,
        from: String,
        to: String,
    },

    #[error("stage {stage} aborted: failure rate {rate:.1}% exceeds ceiling {ceiling:.1}%")]
    FailureCeiling {
        stage: String,
        rate: f64,
        ceiling: f64,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn backend(service: impl Into<String>, message: impl Into<String>, retryable: bool) -> Self {
        Error::Backend {
            service: service.into(),
            message: message.into(),
            retryable,
        }
    }

    /// Whether a retry policy may re-attempt the failed call.
    pub fn is_retryable(&self) -> bool {
        matches!(self, Error::Backend { retryable: true, .. })
    }
}
