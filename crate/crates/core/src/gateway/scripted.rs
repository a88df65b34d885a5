use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;
use sha2::{Digest, Sha256};

use super::{turns_key, Captioner, ChatModel, ChatTurn, DecodingParams, Embedder};
use crate::error::{HmragError, Result};

type Responder = Arc<dyn Fn(&[ChatTurn]) -> Option<String> + Send + Sync>;

struct Rule {
    name: String,
    respond: Responder,
    hits: AtomicUsize,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    #[serde(default)]
    entries: BTreeMap<String, String>,
    #[serde(default)]
    rules: Vec<ScriptRule>,
    #[serde(default)]
    fallback: Option<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptRule {
    contains: String,
    response: String,
}

/// Deterministic chat double.
///
/// Exact entries are keyed by [`turns_key`]. Rules are tried in insertion
/// order when no exact entry matches. A request matching nothing is an error.
#[derive(Default)]
pub struct ScriptedChat {
    entries: HashMap<String, String>,
    rules: Vec<Rule>,
    calls: AtomicUsize,
}

impl ScriptedChat {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_response(mut self, turns: &[ChatTurn], response: impl Into<String>) -> Self {
        self.insert(turns, response);
        self
    }

    pub fn insert(&mut self, turns: &[ChatTurn], response: impl Into<String>) {
        self.entries.insert(turns_key(turns), response.into());
    }

    pub fn insert_key(&mut self, key: impl Into<String>, response: impl Into<String>) {
        self.entries.insert(key.into(), response.into());
    }

    /// Adds a named rule. The responder returns `None` to pass.
    pub fn with_rule<F>(mut self, name: impl Into<String>, respond: F) -> Self
    where
        F: Fn(&[ChatTurn]) -> Option<String> + Send + Sync + 'static,
    {
        self.rules.push(Rule {
            name: name.into(),
            respond: Arc::new(respond),
            hits: AtomicUsize::new(0),
        });
        self
    }

    /// Loads a script file.
    ///
    /// Either a flat JSON object mapping turn keys to responses, or
    /// `{"entries": {..}, "rules": [{"contains": .., "response": ..}], "fallback": ..}`
    /// where rules match on a substring of the last turn and `fallback`
    /// answers anything else.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| HmragError::io(path, e))?;
        let file: ScriptFile = match serde_json::from_str(&raw) {
            Ok(f) => f,
            Err(_) => ScriptFile {
                entries: serde_json::from_str(&raw)?,
                ..ScriptFile::default()
            },
        };
        let mut chat = Self::new();
        for (k, v) in file.entries {
            chat.insert_key(k, v);
        }
        for rule in file.rules {
            let ScriptRule { contains, response } = rule;
            let name = format!("contains:{contains}");
            chat = chat.with_rule(name, move |turns| {
                turns
                    .last()
                    .filter(|t| t.content.contains(&contains))
                    .map(|_| response.clone())
            });
        }
        if let Some(fallback) = file.fallback {
            chat = chat.with_rule("fallback", move |_| Some(fallback.clone()));
        }
        Ok(chat)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn rule_hits(&self, name: &str) -> usize {
        self.rules
            .iter()
            .filter(|r| r.name == name)
            .map(|r| r.hits.load(Ordering::SeqCst))
            .sum()
    }
}

#[async_trait]
impl ChatModel for ScriptedChat {
    async fn complete(&self, turns: &[ChatTurn], _params: &DecodingParams) -> Result<String> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let key = turns_key(turns);
        if let Some(hit) = self.entries.get(&key) {
            return Ok(hit.clone());
        }
        for rule in &self.rules {
            if let Some(out) = (rule.respond)(turns) {
                rule.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(out);
            }
        }
        Err(HmragError::ScriptMiss { key })
    }
}

/// Chat double that is always down.
#[derive(Debug, Default)]
pub struct UnavailableChat;

#[async_trait]
impl ChatModel for UnavailableChat {
    async fn complete(&self, _turns: &[ChatTurn], _params: &DecodingParams) -> Result<String> {
        Err(HmragError::BackendUnreachable {
            attempts: 1,
            message: "backend disabled".into(),
        })
    }
}

/// Embedding double: a unit vector built from the token multiset.
///
/// Each distinct token seeds its own pseudo-random direction; the text vector
/// is the count-weighted sum, normalized. Shared tokens therefore pull
/// vectors together.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
}

impl HashingEmbedder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "embedding dimension must be positive");
        Self { dim }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn token_direction(&self, token: &str) -> Vec<f64> {
        let seed: [u8; 32] = Sha256::digest(token.as_bytes()).into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        (0..self.dim).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    pub fn embed_sync(&self, text: &str) -> Vec<f64> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for tok in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|t| !t.is_empty())
        {
            *counts.entry(tok.to_lowercase()).or_default() += 1;
        }
        if counts.is_empty() {
            counts.insert(text.trim().to_string(), 1);
        }
        let mut acc = vec![0.0; self.dim];
        for (tok, n) in &counts {
            for (a, d) in acc.iter_mut().zip(self.token_direction(tok)) {
                *a += *n as f64 * d;
            }
        }
        let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            acc.iter_mut().for_each(|x| *x /= norm);
        }
        acc
    }
}

#[async_trait]
impl Embedder for HashingEmbedder {
    async fn embed(&self, text: &str) -> Result<Vec<f64>> {
        Ok(self.embed_sync(text))
    }
}

/// Caption double backed by a fixed map from image reference to caption.
#[derive(Debug, Default, Clone)]
pub struct ScriptedCaptioner {
    captions: HashMap<String, String>,
}

impl ScriptedCaptioner {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_caption(mut self, image_ref: impl Into<String>, caption: impl Into<String>) -> Self {
        self.captions.insert(image_ref.into(), caption.into());
        self
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| HmragError::io(path, e))?;
        Ok(Self {
            captions: serde_json::from_str(&raw)?,
        })
    }
}

#[async_trait]
impl Captioner for ScriptedCaptioner {
    async fn caption(&self, image_ref: &str) -> Result<String> {
        self.captions
            .get(image_ref)
            .cloned()
            .ok_or_else(|| HmragError::ImageNotFound(image_ref.to_string()))
    }
}
