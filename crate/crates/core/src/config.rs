//! Plain-text configuration: one `key = value` per line, dotted keys, `#`
//! comments. An empty value means "unset". Keys under `lightweight_chat.`
//! and `expert_chat.` fall back to the matching `chat.` key.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;
use std::time::Duration;

use crate::backends::Backends;
use crate::candidate::Source;
use crate::decision::DecisionConfig;
use crate::error::{HmragError, Result};
use crate::gateway::{
    Captioner, ChatModel, Embedder, HashingEmbedder, HttpCaptioner, HttpChat, HttpEmbedder, ModelBackendConfig,
    ScriptedCaptioner, ScriptedChat,
};
use crate::ingest::{ChunkConfig, IngestConfig};
use crate::orchestrator::PipelineConfig;
use crate::prompts::PromptSet;
use crate::retrieval::web::{SearchConfig, SerperClient, StubSearch, WebSearch, DEFAULT_SEARCH_ENDPOINT};

pub const CONFIG_ENV: &str = "HMRAG_CONFIG";

const INHERITING_ROLES: [&str; 2] = ["lightweight_chat", "expert_chat"];

/// Every recognized key with its default, in display order.
const DEFAULTS: &[(&str, &str)] = &[
    ("chat.kind", "http"),
    ("chat.endpoint", "https://api.openai.com/v1"),
    ("chat.model_name", "gpt-4o-mini"),
    ("chat.api_key_env", "OPENAI_API_KEY"),
    ("chat.timeout_s", "60"),
    ("chat.retries", "2"),
    ("chat.script", ""),
    ("lightweight_chat.model_name", "gpt-4o-mini"),
    ("expert_chat.model_name", "gpt-4o"),
    ("embedding.kind", "http"),
    ("embedding.endpoint", "https://api.openai.com/v1"),
    ("embedding.model_name", "text-embedding-3-small"),
    ("embedding.api_key_env", "OPENAI_API_KEY"),
    ("embedding.timeout_s", "60"),
    ("embedding.retries", "2"),
    ("embedding.dim", "256"),
    ("caption.kind", "http"),
    ("caption.endpoint", "https://api.openai.com/v1"),
    ("caption.model_name", "gpt-4o"),
    ("caption.api_key_env", "OPENAI_API_KEY"),
    ("caption.timeout_s", "120"),
    ("caption.retries", "2"),
    (
        "caption.instruction",
        "Describe this image in detail, including any visible text, labels, and how the depicted objects relate.",
    ),
    ("caption.fixture", ""),
    ("web.kind", "serper"),
    ("web.search_endpoint", DEFAULT_SEARCH_ENDPOINT),
    ("web.api_key_env", "SERPER_API_KEY"),
    ("web.timeout_s", "30"),
    ("web.num_results", "5"),
    ("web.language", "en"),
    ("web.result_type", "web"),
    ("web.stub_fixture_path", ""),
    ("ingest.chunk_size", "512"),
    ("ingest.overlap", "64"),
    ("ingest.concurrency", "4"),
    ("vector.top_k", "5"),
    ("vector.context_header", ""),
    ("graph.tau", "0.3"),
    ("graph.keyword_prompt", ""),
    ("decomposition.judge_prompt", ""),
    ("decomposition.decompose_prompt", ""),
    ("decision.fusion_lambda", "0.5"),
    ("decision.consensus_threshold", "0.5"),
    ("decision.bleu_max_n", "4"),
    ("decision.summary_token_budget", "64"),
    ("decision.lightweight_prompt", ""),
    ("decision.expert_prompt", ""),
    ("prompts.dir", ""),
    ("pipeline.enabled_agents", "vector,graph,web"),
    ("pipeline.decision_enabled", "true"),
    ("pipeline.agent_timeout_s", "30"),
];

/// Prompt-file keys and the template each replaces.
const PROMPT_KEYS: [(&str, &str); 6] = [
    ("vector.context_header", "vector_context.txt"),
    ("graph.keyword_prompt", "keywords.txt"),
    ("decomposition.judge_prompt", "judge.txt"),
    ("decomposition.decompose_prompt", "decompose.txt"),
    ("decision.lightweight_prompt", "refine_lightweight.txt"),
    ("decision.expert_prompt", "refine_expert.txt"),
];

fn default_of(key: &str) -> Option<&'static str> {
    DEFAULTS.iter().find(|(k, _)| *k == key).map(|(_, v)| *v)
}

fn is_known(key: &str) -> bool {
    if default_of(key).is_some() {
        return true;
    }
    key.split_once('.').is_some_and(|(role, rest)| {
        INHERITING_ROLES.contains(&role) && default_of(&format!("chat.{rest}")).is_some()
    })
}

/// The file's default contents, as printed by `config --print-defaults`.
pub fn defaults_text() -> String {
    let mut out = String::from(
        "# Keys under lightweight_chat. and expert_chat. default to the chat. value.\n\
         # Relative paths resolve against this file's directory.\n",
    );
    let mut section = "";
    for (key, value) in DEFAULTS {
        let s = key.split('.').next().unwrap_or("");
        if s != section {
            out.push('\n');
            section = s;
        }
        if value.is_empty() {
            out.push_str(&format!("{key} =\n"));
        } else {
            out.push_str(&format!("{key} = {value}\n"));
        }
    }
    out
}

/// Raw key-value settings.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Settings {
    values: BTreeMap<String, String>,
    base_dir: PathBuf,
}

impl Settings {
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut s = Self {
            values: BTreeMap::new(),
            base_dir: base_dir.to_path_buf(),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(HmragError::Config(format!("line {}: expected key = value", i + 1)));
            };
            s.set(key.trim(), strip_comment(value).trim())
                .map_err(|e| HmragError::Config(format!("line {}: {e}", i + 1)))?;
        }
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HmragError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    /// Sets one key, as from a command-line override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if !is_known(key) {
            return Err(HmragError::Config(format!("unknown key {key:?}")));
        }
        self.values.insert(key.to_string(), value.to_string());
        Ok(())
    }

    /// Parses `key=value`.
    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair
            .split_once('=')
            .ok_or_else(|| HmragError::Config(format!("expected key=value, got {pair:?}")))?;
        self.set(k.trim(), v.trim())
    }

    /// Explicit value, else (for inheriting roles) an explicit `chat.` value,
    /// else the key's own default, else the `chat.` default.
    fn raw(&self, key: &str) -> &str {
        if let Some(v) = self.values.get(key) {
            return v;
        }
        if let Some((role, rest)) = key.split_once('.') {
            if INHERITING_ROLES.contains(&role) {
                let base = format!("chat.{rest}");
                if let Some(v) = self.values.get(&base) {
                    return v;
                }
                return default_of(key).or_else(|| default_of(&base)).unwrap_or("");
            }
        }
        default_of(key).unwrap_or("")
    }

    fn opt(&self, key: &str) -> Option<&str> {
        Some(self.raw(key)).filter(|v| !v.is_empty())
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.raw(key)
            .parse()
            .map_err(|e| HmragError::Config(format!("{key}: {e}")))
    }

    fn path(&self, key: &str) -> Option<PathBuf> {
        self.opt(key).map(|p| self.base_dir.join(p))
    }

    fn required_path(&self, key: &str) -> Result<PathBuf> {
        self.path(key)
            .ok_or_else(|| HmragError::Config(format!("{key} must be set")))
    }

    fn model_backend(&self, role: &str) -> Result<ModelBackendConfig> {
        let cfg = ModelBackendConfig {
            endpoint: self.raw(&format!("{role}.endpoint")).to_string(),
            model_name: self.raw(&format!("{role}.model_name")).to_string(),
            api_key_env: self.raw(&format!("{role}.api_key_env")).to_string(),
            timeout_s: self.get(&format!("{role}.timeout_s"))?,
            retries: self.get(&format!("{role}.retries"))?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn chat_spec(&self, role: &str) -> Result<ChatSpec> {
        match self.raw(&format!("{role}.kind")) {
            "http" => Ok(ChatSpec::Http(self.model_backend(role)?)),
            "scripted" => Ok(ChatSpec::Scripted(self.required_path(&format!("{role}.script"))?)),
            other => Err(HmragError::Config(format!("{role}.kind: unknown kind {other:?}"))),
        }
    }

    pub fn resolve(&self) -> Result<Config> {
        let embedding = match self.raw("embedding.kind") {
            "http" => EmbeddingSpec::Http(self.model_backend("embedding")?),
            "hashing" => {
                let dim: usize = self.get("embedding.dim")?;
                if dim == 0 {
                    return Err(HmragError::Config("embedding.dim must be positive".into()));
                }
                EmbeddingSpec::Hashing { dim }
            }
            other => return Err(HmragError::Config(format!("embedding.kind: unknown kind {other:?}"))),
        };
        let caption = match self.raw("caption.kind") {
            "http" => CaptionSpec::Http {
                backend: self.model_backend("caption")?,
                instruction: self.raw("caption.instruction").to_string(),
            },
            "scripted" => CaptionSpec::Scripted(self.path("caption.fixture")),
            other => return Err(HmragError::Config(format!("caption.kind: unknown kind {other:?}"))),
        };
        let web = match self.raw("web.kind") {
            "serper" => SearchSpec::Serper {
                endpoint: self.raw("web.search_endpoint").to_string(),
                api_key_env: self.raw("web.api_key_env").to_string(),
                timeout_s: self.get("web.timeout_s")?,
            },
            "stub" => SearchSpec::Stub(self.path("web.stub_fixture_path")),
            other => return Err(HmragError::Config(format!("web.kind: unknown kind {other:?}"))),
        };

        let ingest = IngestConfig {
            chunk: ChunkConfig {
                chunk_size: self.get("ingest.chunk_size")?,
                overlap: self.get("ingest.overlap")?,
            },
            concurrency: self.get("ingest.concurrency")?,
        };
        ingest.chunk.validate().map_err(|e| HmragError::Config(e.to_string()))?;

        let enabled_agents = self
            .raw("pipeline.enabled_agents")
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(|s| s.parse::<Source>().map_err(HmragError::Config))
            .collect::<Result<BTreeSet<Source>>>()?;
        let pipeline = PipelineConfig {
            enabled_agents,
            decision_enabled: self.get("pipeline.decision_enabled")?,
            agent_timeout_s: self.get("pipeline.agent_timeout_s")?,
            top_k: self.get("vector.top_k")?,
            tau: self.get("graph.tau")?,
            search: SearchConfig {
                num_results: self.get("web.num_results")?,
                language: self.raw("web.language").to_string(),
                type_: self.raw("web.result_type").to_string(),
            },
            decision: DecisionConfig {
                fusion_lambda: self.get("decision.fusion_lambda")?,
                consensus_threshold: self.get("decision.consensus_threshold")?,
                bleu_max_n: self.get("decision.bleu_max_n")?,
                summary_token_budget: self.get("decision.summary_token_budget")?,
            },
        };
        pipeline.validate()?;

        let mut prompts = PromptSet::default();
        if let Some(dir) = self.path("prompts.dir") {
            prompts = prompts.with_overrides_from(&dir)?;
        }
        for (key, name) in PROMPT_KEYS {
            if let Some(p) = self.path(key) {
                prompts.override_file(name, &p)?;
            }
        }

        Ok(Config {
            chat: self.chat_spec("chat")?,
            lightweight_chat: self.chat_spec("lightweight_chat")?,
            expert_chat: self.chat_spec("expert_chat")?,
            embedding,
            caption,
            web,
            ingest,
            pipeline,
            prompts,
        })
    }
}

fn strip_comment(value: &str) -> &str {
    // A `#` starts a comment only after whitespace, so URLs keep fragments.
    match value.find(" #").or_else(|| value.find("\t#")) {
        Some(i) => &value[..i],
        None => value,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChatSpec {
    Http(ModelBackendConfig),
    Scripted(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EmbeddingSpec {
    Http(ModelBackendConfig),
    Hashing { dim: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub enum CaptionSpec {
    Http { backend: ModelBackendConfig, instruction: String },
    Scripted(Option<PathBuf>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchSpec {
    Serper {
        endpoint: String,
        api_key_env: String,
        timeout_s: f64,
    },
    Stub(Option<PathBuf>),
}

/// Fully resolved configuration.
#[derive(Debug, Clone)]
pub struct Config {
    pub chat: ChatSpec,
    pub lightweight_chat: ChatSpec,
    pub expert_chat: ChatSpec,
    pub embedding: EmbeddingSpec,
    pub caption: CaptionSpec,
    pub web: SearchSpec,
    pub ingest: IngestConfig,
    pub pipeline: PipelineConfig,
    pub prompts: PromptSet,
}

impl Config {
    pub fn defaults() -> Self {
        Settings::default().resolve().expect("defaults resolve")
    }

    /// Loads `path` if given, applies `overrides` (`key=value`), and resolves.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut settings = match path {
            Some(p) => Settings::load(p)?,
            None => Settings {
                base_dir: PathBuf::from("."),
                ..Settings::default()
            },
        };
        for pair in overrides {
            settings.set_pair(pair)?;
        }
        settings.resolve()
    }

    pub fn build_backends(&self) -> Result<Backends> {
        let chat = |spec: &ChatSpec| -> Result<Arc<dyn ChatModel>> {
            Ok(match spec {
                ChatSpec::Http(cfg) => Arc::new(HttpChat::new(cfg.clone())?),
                ChatSpec::Scripted(path) => Arc::new(ScriptedChat::from_json_file(path)?),
            })
        };
        let embedder: Arc<dyn Embedder> = match &self.embedding {
            EmbeddingSpec::Http(cfg) => Arc::new(HttpEmbedder::new(cfg.clone())?),
            EmbeddingSpec::Hashing { dim } => Arc::new(HashingEmbedder::new(*dim)),
        };
        let captioner: Arc<dyn Captioner> = match &self.caption {
            CaptionSpec::Http { backend, instruction } => Arc::new(HttpCaptioner::new(backend.clone(), instruction)?),
            CaptionSpec::Scripted(Some(p)) => Arc::new(ScriptedCaptioner::from_json_file(p)?),
            CaptionSpec::Scripted(None) => Arc::new(ScriptedCaptioner::new()),
        };
        let search: Arc<dyn WebSearch> = match &self.web {
            SearchSpec::Serper {
                endpoint,
                api_key_env,
                timeout_s,
            } => {
                if !(*timeout_s > 0.0) {
                    return Err(HmragError::Config(format!("web.timeout_s must be positive, got {timeout_s}")));
                }
                Arc::new(SerperClient::new(endpoint.clone(), api_key_env, Duration::from_secs_f64(*timeout_s))?)
            }
            SearchSpec::Stub(Some(p)) => Arc::new(StubSearch::from_json_file(p)?),
            SearchSpec::Stub(None) => Arc::new(StubSearch::new()),
        };
        Ok(Backends {
            chat: chat(&self.chat)?,
            lightweight_chat: chat(&self.lightweight_chat)?,
            expert_chat: chat(&self.expert_chat)?,
            embedder,
            captioner,
            search,
        })
    }
}
