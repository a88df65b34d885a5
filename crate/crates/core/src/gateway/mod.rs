//! Model gateway: one interface over chat, embedding, and caption backends.
//!
//! Every backend is reached through a trait object so the pipeline can mix
//! HTTP clients with the deterministic doubles in [`scripted`]. Callers go
//! through [`complete_chat`], [`embed_text`] and [`caption_image`], which
//! enforce the input preconditions before the backend sees anything.

mod http;
mod recording;
mod scripted;

use std::fmt;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HmragError, Result};

pub use http::{HttpCaptioner, HttpChat, HttpEmbedder};
pub use recording::{text_key, CallKind, CallLog, CallRecord, RecordingCaptioner, RecordingChat, RecordingEmbedder};
pub use scripted::{HashingEmbedder, ScriptedCaptioner, ScriptedChat, UnavailableChat};

/// Sampling parameters sent with every chat request.
///
/// The defaults pin greedy decoding: temperature 0 and nucleus mass 1.0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            max_tokens: 1024,
        }
    }
}

impl DecodingParams {
    pub fn with_max_tokens(max_tokens: u32) -> Self {
        Self {
            max_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature >= 0.0) {
            return Err(HmragError::InvalidInput(format!(
                "temperature must be >= 0, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(HmragError::InvalidInput(format!(
                "top_p must be in (0, 1], got {}",
                self.top_p
            )));
        }
        if self.max_tokens == 0 {
            return Err(HmragError::InvalidInput("max_tokens must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub content: String,
}

impl ChatTurn {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// Canonical key of a turn list: hex SHA-256 over its JSON serialization.
pub fn turns_key(turns: &[ChatTurn]) -> String {
    let canonical = serde_json::to_vec(turns).expect("turns serialize");
    hex::encode(Sha256::digest(&canonical))
}

/// Connection settings for one HTTP backend role.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBackendConfig {
    pub endpoint: String,
    pub model_name: String,
    /// Name of the environment variable holding the API key. Empty means no auth.
    pub api_key_env: String,
    pub timeout_s: f64,
    pub retries: u32,
}

impl ModelBackendConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.timeout_s > 0.0) {
            return Err(HmragError::Config(format!(
                "timeout must be positive, got {}",
                self.timeout_s
            )));
        }
        if self.endpoint.trim().is_empty() {
            return Err(HmragError::Config("endpoint is empty".into()));
        }
        Ok(())
    }

    pub(crate) fn api_key(&self) -> Option<String> {
        if self.api_key_env.is_empty() {
            return None;
        }
        match std::env::var(&self.api_key_env) {
            Ok(key) if !key.is_empty() => Some(key),
            _ => {
                tracing::warn!(var = %self.api_key_env, "api key variable not set; sending unauthenticated requests");
                None
            }
        }
    }
}

#[async_trait]
pub trait ChatModel: Send + Sync {
    async fn complete(&self, turns: &[ChatTurn], params: &DecodingParams) -> Result<String>;
}

#[async_trait]
pub trait Embedder: Send + Sync {
    async fn embed(&self, text: &str) -> Result<Vec<f64>>;
}

#[async_trait]
pub trait Captioner: Send + Sync {
    async fn caption(&self, image_ref: &str) -> Result<String>;
}

pub async fn complete_chat(
    model: &dyn ChatModel,
    turns: &[ChatTurn],
    params: &DecodingParams,
) -> Result<String> {
    if turns.is_empty() {
        return Err(HmragError::InvalidInput("chat turn list is empty".into()));
    }
    if turns
        .iter()
        .any(|t| t.role == Role::User && t.content.trim().is_empty())
    {
        return Err(HmragError::InvalidInput("user turn has empty content".into()));
    }
    params.validate()?;
    model.complete(turns, params).await
}

pub async fn embed_text(embedder: &dyn Embedder, text: &str) -> Result<Vec<f64>> {
    if text.trim().is_empty() {
        return Err(HmragError::InvalidInput("cannot embed empty text".into()));
    }
    embedder.embed(text).await
}

pub async fn caption_image(captioner: &dyn Captioner, image_ref: &str) -> Result<String> {
    if image_ref.trim().is_empty() {
        return Err(HmragError::InvalidInput("image reference is empty".into()));
    }
    captioner.caption(image_ref).await
}
