//! Clients for servers speaking the chat-completions and embeddings JSON formats.

use std::future::Future;
use std::path::Path;
use std::sync::OnceLock;
use std::time::Duration;

use async_trait::async_trait;
use base64::Engine;
use reqwest::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{Captioner, ChatModel, ChatTurn, DecodingParams, Embedder, ModelBackendConfig};
use crate::error::{HmragError, Result};

fn build_client(cfg: &ModelBackendConfig) -> Result<Client> {
    cfg.validate()?;
    Client::builder()
        .timeout(Duration::from_secs_f64(cfg.timeout_s))
        .build()
        .map_err(|e| HmragError::Config(format!("http client: {e}")))
}

fn join_url(endpoint: &str, path: &str) -> String {
    format!("{}/{}", endpoint.trim_end_matches('/'), path)
}

/// Runs `op` up to `retries + 1` times while it fails with a retryable error.
pub(crate) async fn with_retries<T, F, Fut>(retries: u32, mut op: F) -> Result<T>
where
    F: FnMut() -> Fut,
    Fut: Future<Output = Result<T>>,
{
    let mut attempt = 0;
    loop {
        attempt += 1;
        match op().await {
            Err(e) if e.is_retryable() && attempt <= retries => {
                tracing::warn!(attempt, error = %e, "retrying backend call");
                tokio::time::sleep(Duration::from_millis(50 * u64::from(attempt))).await;
            }
            Err(HmragError::BackendUnreachable { message, .. }) => {
                return Err(HmragError::BackendUnreachable {
                    attempts: attempt,
                    message,
                })
            }
            other => return other,
        }
    }
}

async fn post_json(client: &Client, url: &str, key: Option<&str>, body: &Value) -> Result<Value> {
    let mut req = client.post(url).json(body);
    if let Some(key) = key {
        req = req.bearer_auth(key);
    }
    let resp = req.send().await.map_err(|e| HmragError::BackendUnreachable {
        attempts: 1,
        message: e.to_string(),
    })?;
    let status = resp.status();
    let text = resp.text().await.map_err(|e| HmragError::BackendUnreachable {
        attempts: 1,
        message: e.to_string(),
    })?;
    if status.is_server_error() || status.as_u16() == 429 {
        return Err(HmragError::BackendUnreachable {
            attempts: 1,
            message: format!("{status}: {text}"),
        });
    }
    if !status.is_success() {
        return Err(HmragError::BackendResponse(format!("{status}: {text}")));
    }
    serde_json::from_str(&text).map_err(|e| HmragError::BackendResponse(format!("{e}: {text}")))
}

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatTurn],
    temperature: f64,
    top_p: f64,
    max_tokens: u32,
    stream: bool,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<ChatChoice>,
}

#[derive(Debug, Deserialize)]
struct ChatChoice {
    message: ChatMessage,
}

#[derive(Debug, Deserialize)]
struct ChatMessage {
    #[serde(default)]
    content: Option<String>,
}

fn first_choice_text(value: Value) -> Result<String> {
    let parsed: ChatResponse = serde_json::from_value(value)
        .map_err(|e| HmragError::BackendResponse(format!("chat response: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| HmragError::BackendResponse("chat response has no content".into()))
}

pub struct HttpChat {
    cfg: ModelBackendConfig,
    client: Client,
    key: Option<String>,
}

impl HttpChat {
    pub fn new(cfg: ModelBackendConfig) -> Result<Self> {
        let client = build_client(&cfg)?;
        let key = cfg.api_key();
        Ok(Self { cfg, client, key })
    }
}

#[async_trait]
impl ChatModel for HttpChat {
    async fn complete(&self, turns: &[ChatTurn], params: &DecodingParams) -> Result<String> {
        let body = serde_json::to_value(ChatRequest {
            model: &self.cfg.model_name,
            messages: turns,
            temperature: params.temperature,
            top_p: params.top_p,
            max_tokens: params.max_tokens,
            stream: false,
        })?;
        let url = join_url(&self.cfg.endpoint, "chat/completions");
        let value = with_retries(self.cfg.retries, || {
            post_json(&self.client, &url, self.key.as_deref(), &body)
        })
        .await?;
        first_choice_text(value)
    }
}

#[derive(Debug, Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Debug, Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

/// Embeddings client. The first successful call fixes the dimension for the
/// lifetime of the value.
pub struct HttpEmbedder {
    cfg: ModelBackendConfig,
    client: Client,
    key: Option<String>,
    dim: OnceLock<usize>,
}

impl HttpEmbedder {
    pub fn new(cfg: ModelBackendConfig) -> Result<Self> {
        let client = build_client(&cfg)?;
        let key = cfg.api_key();
        Ok(Self {
            cfg,
            client,
            key,
            dim: OnceLock::new(),
        })
    }
}

#[async_trait]
impl Embedder for HttpEmbedder {
    async fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let body = json!({ "model": self.cfg.model_name, "input": [text] });
        let url = join_url(&self.cfg.endpoint, "embeddings");
        let value = with_retries(self.cfg.retries, || {
            post_json(&self.client, &url, self.key.as_deref(), &body)
        })
        .await?;
        let parsed: EmbeddingResponse = serde_json::from_value(value)
            .map_err(|e| HmragError::BackendResponse(format!("embedding response: {e}")))?;
        let vector = parsed
            .data
            .into_iter()
            .next()
            .map(|d| d.embedding)
            .filter(|v| !v.is_empty())
            .ok_or_else(|| HmragError::BackendResponse("embedding response is empty".into()))?;
        let expected = *self.dim.get_or_init(|| vector.len());
        if vector.len() != expected {
            return Err(HmragError::DimensionMismatch {
                expected,
                actual: vector.len(),
            });
        }
        Ok(vector)
    }
}

/// Caption backend that sends the image to a vision-capable chat endpoint.
///
/// Local paths are inlined as base64 data URLs; `http(s)://` references are
/// forwarded as-is.
pub struct HttpCaptioner {
    chat: HttpChat,
    instruction: String,
}

impl HttpCaptioner {
    pub fn new(cfg: ModelBackendConfig, instruction: impl Into<String>) -> Result<Self> {
        Ok(Self {
            chat: HttpChat::new(cfg)?,
            instruction: instruction.into(),
        })
    }

    fn resolve(image_ref: &str) -> Result<String> {
        if image_ref.starts_with("http://") || image_ref.starts_with("https://") {
            return Ok(image_ref.to_string());
        }
        let path = Path::new(image_ref);
        let bytes = std::fs::read(path).map_err(|_| HmragError::ImageNotFound(image_ref.into()))?;
        let mime = match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("jpg") | Some("jpeg") => "image/jpeg",
            Some("gif") => "image/gif",
            Some("webp") => "image/webp",
            _ => "image/png",
        };
        let encoded = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(format!("data:{mime};base64,{encoded}"))
    }
}

#[async_trait]
impl Captioner for HttpCaptioner {
    async fn caption(&self, image_ref: &str) -> Result<String> {
        let url = Self::resolve(image_ref)?;
        let params = DecodingParams::default();
        let body = json!({
            "model": self.chat.cfg.model_name,
            "messages": [{
                "role": "user",
                "content": [
                    { "type": "text", "text": self.instruction },
                    { "type": "image_url", "image_url": { "url": url } }
                ]
            }],
            "temperature": params.temperature,
            "top_p": params.top_p,
            "max_tokens": params.max_tokens,
            "stream": false
        });
        let endpoint = join_url(&self.chat.cfg.endpoint, "chat/completions");
        let value = with_retries(self.chat.cfg.retries, || {
            post_json(&self.chat.client, &endpoint, self.chat.key.as_deref(), &body)
        })
        .await?;
        first_choice_text(value)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::atomic::{AtomicU32, Ordering};

    use super::*;
    use crate::gateway::caption_image;

    fn cfg(endpoint: &str) -> ModelBackendConfig {
        ModelBackendConfig {
            endpoint: endpoint.into(),
            model_name: "test".into(),
            api_key_env: String::new(),
            timeout_s: 2.0,
            retries: 2,
        }
    }

    #[tokio::test]
    async fn retries_stop_after_budget() {
        let attempts = AtomicU32::new(0);
        let out: Result<()> = with_retries(2, || {
            attempts.fetch_add(1, Ordering::SeqCst);
            async {
                Err(HmragError::BackendUnreachable {
                    attempts: 1,
                    message: "down".into(),
                })
            }
        })
        .await;
        assert_eq!(attempts.load(Ordering::SeqCst), 3);
        assert!(matches!(out, Err(HmragError::BackendUnreachable { attempts: 3, .. })));
    }

    #[tokio::test]
    async fn retries_return_the_eventual_value() {
        let attempts = AtomicU32::new(0);
        let out = with_retries(3, || {
            let n = attempts.fetch_add(1, Ordering::SeqCst);
            async move {
                if n < 2 {
                    Err(HmragError::BackendUnreachable {
                        attempts: 1,
                        message: "flaky".into(),
                    })
                } else {
                    Ok("same")
                }
            }
        })
        .await
        .unwrap();
        assert_eq!(out, "same");
    }

    #[tokio::test]
    async fn non_retryable_errors_fail_fast() {
        let attempts = AtomicU32::new(0);
        let out: Result<()> = with_retries(5, || {
            attempts.fetch_add(1, Ordering::SeqCst);
            async { Err(HmragError::BackendResponse("bad".into())) }
        })
        .await;
        assert!(out.is_err());
        assert_eq!(attempts.load(Ordering::SeqCst), 1);
    }

    #[tokio::test]
    async fn missing_image_file_is_an_error() {
        let cap = HttpCaptioner::new(cfg("http://127.0.0.1:9"), "Describe the image.").unwrap();
        let err = caption_image(&cap, "/definitely/not/here.png").await;
        assert!(matches!(err, Err(HmragError::ImageNotFound(_))));
    }

    #[test]
    fn parses_first_choice() {
        let v = json!({"choices":[{"message":{"role":"assistant","content":"Granite."}}]});
        assert_eq!(first_choice_text(v).unwrap(), "Granite.");
        assert!(first_choice_text(json!({"choices":[]})).is_err());
    }

    #[test]
    fn url_join_handles_trailing_slash() {
        assert_eq!(join_url("http://h/v1/", "embeddings"), "http://h/v1/embeddings");
        assert_eq!(join_url("http://h/v1", "embeddings"), "http://h/v1/embeddings");
    }
}
