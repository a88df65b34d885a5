//! Web search agent: a Serper-compatible client, a file-backed stub, and
//! snippet-grounded answer generation.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use reqwest::Client;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::candidate::{AnswerCandidate, Source};
use crate::error::{HmragError, Result};
use crate::gateway::{complete_chat, CallKind, CallLog, ChatModel, ChatTurn, DecodingParams};
use crate::prompts::render;

pub const DEFAULT_SEARCH_ENDPOINT: &str = "https://google.serper.dev/search";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub num_results: usize,
    pub language: String,
    #[serde(rename = "type")]
    pub type_: String,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            num_results: super::vector::DEFAULT_TOP_K,
            language: "en".into(),
            type_: "web".into(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_results == 0 {
            return Err(HmragError::InvalidInput("num_results must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
    pub position: u32,
}

/// Anything that returns a Serper-style JSON payload for a query.
#[async_trait]
pub trait WebSearch: Send + Sync {
    async fn search_raw(&self, query: &str, cfg: &SearchConfig) -> Result<String>;
}

#[derive(Debug, Deserialize)]
struct OrganicItem {
    #[serde(default)]
    title: String,
    #[serde(default)]
    snippet: String,
    #[serde(default)]
    link: String,
    #[serde(default)]
    position: Option<u32>,
}

/// Parses the `organic` array of a Serper-style response. A missing array
/// means no results. Results come back sorted by position and truncated.
pub fn parse_search_response(raw: &str, num_results: usize) -> Result<Vec<SearchResult>> {
    let parse_err = |message: String| HmragError::SearchParse {
        message,
        raw: raw.to_string(),
    };
    let value: Value = serde_json::from_str(raw).map_err(|e| parse_err(e.to_string()))?;
    let organic = match value.get("organic") {
        None | Some(Value::Null) => return Ok(Vec::new()),
        Some(v) => v.clone(),
    };
    let items: Vec<OrganicItem> = serde_json::from_value(organic).map_err(|e| parse_err(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut results = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        let position = item.position.unwrap_or(i as u32 + 1);
        if position == 0 {
            return Err(HmragError::Invariant("search result position must be positive".into()));
        }
        if !seen.insert(position) {
            return Err(HmragError::Invariant(format!("duplicate search result position {position}")));
        }
        if item.link.trim().is_empty() {
            return Err(HmragError::Invariant(format!("search result {position} has no url")));
        }
        results.push(SearchResult {
            title: item.title,
            snippet: item.snippet,
            url: item.link,
            position,
        });
    }
    results.sort_by_key(|r| r.position);
    results.truncate(num_results);
    Ok(results)
}

pub async fn search(query: &str, cfg: &SearchConfig, backend: &dyn WebSearch) -> Result<Vec<SearchResult>> {
    if query.trim().is_empty() {
        return Err(HmragError::InvalidInput("search query is empty".into()));
    }
    cfg.validate()?;
    let raw = backend.search_raw(query, cfg).await?;
    parse_search_response(&raw, cfg.num_results)
}

/// Live client for a Serper-compatible endpoint.
pub struct SerperClient {
    endpoint: String,
    client: Client,
    key: Option<String>,
}

impl SerperClient {
    pub fn new(endpoint: impl Into<String>, api_key_env: &str, timeout: Duration) -> Result<Self> {
        let client = Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| HmragError::Config(format!("http client: {e}")))?;
        let key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
        if key.is_none() {
            tracing::warn!(var = %api_key_env, "search api key variable not set");
        }
        Ok(Self {
            endpoint: endpoint.into(),
            client,
            key,
        })
    }
}

#[async_trait]
impl WebSearch for SerperClient {
    async fn search_raw(&self, query: &str, cfg: &SearchConfig) -> Result<String> {
        let mut body = json!({ "q": query, "num": cfg.num_results, "hl": cfg.language });
        if cfg.type_ != "web" {
            body["type"] = json!(cfg.type_);
        }
        let mut req = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.key {
            req = req.header("X-API-KEY", key);
        }
        let unreachable = |e: reqwest::Error| HmragError::BackendUnreachable {
            attempts: 1,
            message: e.to_string(),
        };
        let resp = req.send().await.map_err(unreachable)?;
        let status = resp.status();
        let body = resp.text().await.map_err(unreachable)?;
        if !status.is_success() {
            return Err(HmragError::BackendUnreachable {
                attempts: 1,
                message: format!("{status}: {body}"),
            });
        }
        Ok(body)
    }
}

/// Serves canned responses keyed by exact query string. Unknown queries get
/// an empty result list.
#[derive(Debug, Clone, Default)]
pub struct StubSearch {
    responses: BTreeMap<String, Value>,
}

impl StubSearch {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, query: impl Into<String>, response: Value) -> Self {
        self.responses.insert(query.into(), response);
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| HmragError::io(path, e))?;
        Ok(Self {
            responses: serde_json::from_str(&raw)?,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.responses).expect("stub serializes")
    }
}

#[async_trait]
impl WebSearch for StubSearch {
    async fn search_raw(&self, query: &str, _cfg: &SearchConfig) -> Result<String> {
        Ok(match self.responses.get(query) {
            Some(v) => v.to_string(),
            None => r#"{"organic":[]}"#.to_string(),
        })
    }
}

pub struct RecordingSearch {
    inner: Arc<dyn WebSearch>,
    log: CallLog,
}

impl RecordingSearch {
    pub fn new(inner: Arc<dyn WebSearch>, log: CallLog) -> Self {
        Self { inner, log }
    }
}

#[async_trait]
impl WebSearch for RecordingSearch {
    async fn search_raw(&self, query: &str, cfg: &SearchConfig) -> Result<String> {
        let out = self.inner.search_raw(query, cfg).await;
        self.log.record(
            "search",
            CallKind::Search,
            crate::gateway::text_key(query),
            out.is_ok(),
        );
        out
    }
}

pub const NO_WEB_EVIDENCE: &str = "(no web search results were found)";

pub fn format_results(results: &[SearchResult]) -> String {
    if results.is_empty() {
        return NO_WEB_EVIDENCE.to_string();
    }
    results
        .iter()
        .map(|r| format!("[{}] {} - {} ({})", r.position, r.title, r.snippet, r.url))
        .collect::<Vec<_>>()
        .join("\n")
}

pub async fn answer(
    query: &str,
    results: &[SearchResult],
    chat: &dyn ChatModel,
    template: &str,
) -> AnswerCandidate {
    let evidence = format_results(results);
    let prompt = render(template, &[("question", query), ("evidence", &evidence)]);
    match complete_chat(chat, &[ChatTurn::user(prompt)], &DecodingParams::default()).await {
        Ok(text) => AnswerCandidate::new(
            Source::Web,
            text.trim(),
            results.iter().map(|r| r.url.clone()).collect(),
        ),
        Err(e) => AnswerCandidate::unavailable(Source::Web, e.to_string()),
    }
}
