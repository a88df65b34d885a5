use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, HmragError>;

#[derive(Debug, Error)]
pub enum HmragError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("backend unreachable after {attempts} attempt(s): {message}")]
    BackendUnreachable { attempts: u32, message: String },

    #[error("backend returned an unusable response: {0}")]
    BackendResponse(String),

    #[error("scripted backend has no entry for key {key}")]
    ScriptMiss { key: String },

    #[error("embedding dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("duplicate id: {0}")]
    DuplicateId(String),

    #[error("image not found: {0}")]
    ImageNotFound(String),

    #[error("search response could not be parsed: {message}")]
    SearchParse { message: String, raw: String },

    #[error("no agent produced an answer for {sub_query:?}")]
    AllAgentsUnavailable { sub_query: String },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("missing environment variable {0}")]
    MissingEnv(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("timed out after {0:?}")]
    Timeout(std::time::Duration),

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl HmragError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        HmragError::Io {
            path: path.into(),
            source,
        }
    }

    /// Transport-level failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(self, HmragError::BackendUnreachable { .. } | HmragError::Timeout(_))
    }
}
