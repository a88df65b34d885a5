//! End-to-end query flow.
//!
//! A question is decomposed, each sub-query is sent to the enabled agents
//! concurrently, the decision agent arbitrates their answers, and sub-queries
//! run in order so later ones see earlier answers. Every backend call lands
//! in the query's trace.

pub mod eval;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::future::Future;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::backends::Backends;
use crate::candidate::{AnswerCandidate, Source};
use crate::decision::{decide, ConsensusReport, DecisionConfig, Route};
use crate::decompose::{decompose, SubQueryPlan};
use crate::error::{HmragError, Result};
use crate::gateway::{complete_chat, CallLog, CallRecord, ChatTurn, DecodingParams};
use crate::ingest::Stores;
use crate::prompts::{render, PromptSet};
use crate::retrieval::graph::{self, LabelEmbeddings, DEFAULT_TAU};
use crate::retrieval::vector::{self, DEFAULT_TOP_K};
use crate::retrieval::web::{self, SearchConfig};

/// Order in which a single answer is picked when arbitration is off.
pub const FALLBACK_ORDER: [Source; 3] = [Source::Web, Source::Vector, Source::Graph];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub enabled_agents: BTreeSet<Source>,
    pub decision_enabled: bool,
    pub agent_timeout_s: f64,
    pub top_k: usize,
    pub tau: f64,
    pub search: SearchConfig,
    pub decision: DecisionConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            enabled_agents: Source::ALL.into_iter().collect(),
            decision_enabled: true,
            agent_timeout_s: 30.0,
            top_k: DEFAULT_TOP_K,
            tau: DEFAULT_TAU,
            search: SearchConfig::default(),
            decision: DecisionConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.enabled_agents.is_empty() {
            return Err(HmragError::Config("at least one retrieval agent must be enabled".into()));
        }
        if !(self.agent_timeout_s > 0.0) {
            return Err(HmragError::Config(format!(
                "agent timeout must be positive, got {}",
                self.agent_timeout_s
            )));
        }
        if self.top_k == 0 {
            return Err(HmragError::Config("top_k must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(HmragError::Config(format!("tau must be in [0, 1], got {}", self.tau)));
        }
        self.search.validate()?;
        self.decision.validate()
    }

    pub fn without(mut self, source: Source) -> Self {
        self.enabled_agents.remove(&source);
        self
    }
}

/// Record of one sub-query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub sub_query: String,
    /// The sub-query as the answer prompts saw it, with earlier answers.
    pub prompt_query: String,
    /// One per enabled agent, in vector, graph, web order.
    pub candidates: Vec<AnswerCandidate>,
    pub report: Option<ConsensusReport>,
    /// Set when arbitration is off and one agent's answer was taken as is.
    pub fallback_source: Option<Source>,
    pub answer: String,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryTrace {
    pub question: String,
    pub plan: SubQueryPlan,
    pub steps: Vec<StepTrace>,
    pub final_answer: Option<String>,
    pub calls: Vec<CallRecord>,
    pub timings_ms: BTreeMap<String, f64>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

impl QueryTrace {
    fn new(question: &str) -> Self {
        Self {
            question: question.to_string(),
            plan: SubQueryPlan::single(question),
            steps: Vec::new(),
            final_answer: None,
            calls: Vec::new(),
            timings_ms: BTreeMap::new(),
            warnings: Vec::new(),
            error: None,
        }
    }

    /// Comparison form: timings cleared and calls sorted, since concurrent
    /// agents log in arbitrary order.
    pub fn normalized(&self) -> QueryTrace {
        let mut t = self.clone();
        t.timings_ms.clear();
        for s in &mut t.steps {
            s.timings_ms.clear();
        }
        t.calls.sort();
        t
    }

    pub fn normalized_json(&self) -> String {
        serde_json::to_string(&self.normalized()).expect("trace serializes")
    }

    pub fn routes(&self) -> Vec<Option<Route>> {
        self.steps.iter().map(|s| s.report.as_ref().map(|r| r.route)).collect()
    }
}

/// A failed query together with everything recorded up to the failure.
#[derive(Debug, thiserror::Error)]
#[error("{error}")]
pub struct QueryFailure {
    pub error: HmragError,
    pub trace: Box<QueryTrace>,
}

/// The sub-query text handed to answer prompts: the sub-query followed by
/// the earlier steps and their answers.
pub fn compose_query(sub_query: &str, earlier: &[(String, String)]) -> String {
    if earlier.is_empty() {
        return sub_query.to_string();
    }
    let mut out = format!("{sub_query}\n\nAnswers to earlier steps:");
    for (i, (q, a)) in earlier.iter().enumerate() {
        let _ = write!(out, "\n{}. {q}\nAnswer: {a}", i + 1);
    }
    out
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1000.0
}

async fn when<F: Future>(enabled: bool, fut: F) -> Option<F::Output> {
    if enabled {
        Some(fut.await)
    } else {
        None
    }
}

type AgentOutput = (AnswerCandidate, Vec<String>);

pub struct Pipeline {
    stores: Arc<Stores>,
    backends: Backends,
    prompts: PromptSet,
    cfg: PipelineConfig,
    labels: LabelEmbeddings,
}

impl Pipeline {
    /// Validates the configuration and embeds the graph labels once, so the
    /// per-query traces do not depend on what earlier queries cached.
    pub async fn new(stores: Arc<Stores>, backends: Backends, prompts: PromptSet, cfg: PipelineConfig) -> Result<Self> {
        cfg.validate()?;
        let labels = LabelEmbeddings::new();
        if cfg.enabled_agents.contains(&Source::Graph) && !stores.graph.is_empty() {
            if let Err(e) = labels.warm(&stores.graph, backends.embedder.as_ref()).await {
                tracing::warn!(error = %e, "could not pre-embed graph labels");
            }
        }
        Ok(Self {
            stores,
            backends,
            prompts,
            cfg,
            labels,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn stores(&self) -> &Stores {
        &self.stores
    }

    pub async fn run_query(&self, question: &str) -> std::result::Result<QueryTrace, QueryFailure> {
        let log = CallLog::new();
        let b = self.backends.recorded(&log);
        let mut trace = QueryTrace::new(question);
        let fail = |mut trace: QueryTrace, error: HmragError| {
            trace.calls = log.snapshot();
            trace.error = Some(error.to_string());
            Err(QueryFailure {
                error,
                trace: Box::new(trace),
            })
        };

        let started = Instant::now();
        let decomposition = match decompose(question, b.chat.as_ref(), &self.prompts.judge, &self.prompts.decompose).await
        {
            Ok(d) => d,
            Err(e) => return fail(trace, e),
        };
        trace.timings_ms.insert("decompose".into(), ms(started));
        trace.plan = decomposition.plan;
        trace.warnings.extend(decomposition.warnings);

        let mut earlier: Vec<(String, String)> = Vec::new();
        for sub_query in trace.plan.sub_queries.clone() {
            let prompt_query = compose_query(&sub_query, &earlier);
            let step = self.run_step(&b, &sub_query, prompt_query).await;
            match step {
                Ok(step) => {
                    earlier.push((sub_query, step.answer.clone()));
                    trace.steps.push(step);
                }
                Err((step, e)) => {
                    trace.steps.push(step);
                    return fail(trace, e);
                }
            }
        }

        let last = earlier.last().map(|(_, a)| a.clone()).unwrap_or_default();
        let final_answer = if trace.plan.multi_intent {
            let started = Instant::now();
            let answer = self.refine_final(&b, question, &earlier, &mut trace.warnings, last).await;
            trace.timings_ms.insert("final".into(), ms(started));
            answer
        } else {
            last
        };
        if final_answer.trim().is_empty() {
            return fail(trace, HmragError::BackendResponse("final answer is empty".into()));
        }
        trace.final_answer = Some(final_answer);
        trace.timings_ms.insert("total".into(), ms(started));
        trace.calls = log.snapshot();
        Ok(trace)
    }

    async fn refine_final(
        &self,
        b: &Backends,
        question: &str,
        steps: &[(String, String)],
        warnings: &mut Vec<String>,
        last: String,
    ) -> String {
        let mut listed = String::new();
        for (i, (q, a)) in steps.iter().enumerate() {
            let _ = writeln!(listed, "{}. {q}\nAnswer: {a}", i + 1);
        }
        let prompt = render(&self.prompts.final_answer, &[("question", question), ("steps", listed.trim_end())]);
        match complete_chat(b.lightweight_chat.as_ref(), &[ChatTurn::user(prompt)], &DecodingParams::default()).await {
            Ok(a) if !a.trim().is_empty() => a.trim().to_string(),
            Ok(_) => {
                warnings.push("final refinement was empty; using the last step's answer".into());
                last
            }
            Err(e) => {
                warnings.push(format!("final refinement failed ({e}); using the last step's answer"));
                last
            }
        }
    }

    async fn run_step(
        &self,
        b: &Backends,
        sub_query: &str,
        prompt_query: String,
    ) -> std::result::Result<StepTrace, (StepTrace, HmragError)> {
        let mut step = StepTrace {
            sub_query: sub_query.to_string(),
            prompt_query,
            candidates: Vec::new(),
            report: None,
            fallback_source: None,
            answer: String::new(),
            timings_ms: BTreeMap::new(),
            warnings: Vec::new(),
        };
        let timeout = Duration::from_secs_f64(self.cfg.agent_timeout_s);
        let on = |s: Source| self.cfg.enabled_agents.contains(&s);
        let pq = step.prompt_query.as_str();

        let started = Instant::now();
        let (v, g, w) = tokio::join!(
            when(on(Source::Vector), guarded(Source::Vector, timeout, self.vector_agent(b, sub_query, pq))),
            when(on(Source::Graph), guarded(Source::Graph, timeout, self.graph_agent(b, sub_query, pq))),
            when(on(Source::Web), guarded(Source::Web, timeout, self.web_agent(b, sub_query, pq))),
        );
        for (candidate, warnings, elapsed) in [v, g, w].into_iter().flatten() {
            step.timings_ms.insert(candidate.source.to_string(), elapsed);
            step.warnings.extend(warnings);
            step.candidates.push(candidate);
        }
        step.timings_ms.insert("agents".into(), ms(started));

        if !step.candidates.iter().any(|c| c.available) {
            let err = HmragError::AllAgentsUnavailable {
                sub_query: sub_query.to_string(),
            };
            return Err((step, err));
        }

        if !self.cfg.decision_enabled {
            let chosen = FALLBACK_ORDER
                .iter()
                .find_map(|s| step.candidates.iter().find(|c| c.source == *s && c.available))
                .expect("an available candidate exists");
            step.fallback_source = Some(chosen.source);
            step.answer = chosen.text.clone();
            return Ok(step);
        }

        let started = Instant::now();
        let decision = decide(
            &step.prompt_query,
            step.candidates.clone(),
            b.lightweight_chat.as_ref(),
            b.expert_chat.as_ref(),
            &self.prompts,
            &self.cfg.decision,
        )
        .await;
        step.timings_ms.insert("decision".into(), ms(started));
        match decision {
            Ok(d) => {
                step.candidates = d.candidates;
                step.report = Some(d.report);
                step.answer = d.final_answer;
                step.warnings.extend(d.warnings);
                Ok(step)
            }
            Err(e) => Err((step, e)),
        }
    }

    async fn vector_agent(&self, b: &Backends, sub_query: &str, prompt_query: &str) -> AgentOutput {
        let result = match vector::retrieve_top_k(sub_query, &self.stores.index, self.cfg.top_k, b.embedder.as_ref()).await
        {
            Ok(r) => r,
            Err(e) => return (AnswerCandidate::unavailable(Source::Vector, format!("retrieval failed: {e}")), vec![]),
        };
        let candidate = vector::answer(prompt_query, &result, b.chat.as_ref(), &self.prompts.vector_context)
            .await
            .unwrap_or_else(|e| AnswerCandidate::unavailable(Source::Vector, e.to_string()));
        (candidate, vec![])
    }

    async fn graph_agent(&self, b: &Backends, sub_query: &str, prompt_query: &str) -> AgentOutput {
        let mut warnings = Vec::new();
        let keywords = match graph::extract_keywords(sub_query, b.chat.as_ref(), &self.prompts.keywords).await {
            Ok(k) => {
                if k.fallback {
                    warnings.push("graph: keyword response unparseable, using query words".to_string());
                }
                k.keywords
            }
            Err(e) => {
                warnings.push(format!("graph: keyword extraction failed ({e}), using query words"));
                graph::fallback_keywords(sub_query)
            }
        };
        let sub = match graph::retrieve_subgraph(
            &keywords,
            &self.stores.graph,
            self.cfg.tau,
            b.embedder.as_ref(),
            &self.labels,
        )
        .await
        {
            Ok(s) => s,
            Err(e) => {
                return (
                    AnswerCandidate::unavailable(Source::Graph, format!("retrieval failed: {e}")),
                    warnings,
                )
            }
        };
        let sub = graph::expand_one_hop(&sub, &self.stores.graph);
        let candidate = graph::answer(
            prompt_query,
            &sub,
            &self.stores.graph,
            b.lightweight_chat.as_ref(),
            &self.prompts.graph_answer,
        )
        .await;
        (candidate, warnings)
    }

    async fn web_agent(&self, b: &Backends, sub_query: &str, prompt_query: &str) -> AgentOutput {
        let results = match web::search(sub_query, &self.cfg.search, b.search.as_ref()).await {
            Ok(r) => r,
            Err(e) => return (AnswerCandidate::unavailable(Source::Web, format!("search failed: {e}")), vec![]),
        };
        let candidate = web::answer(prompt_query, &results, b.chat.as_ref(), &self.prompts.web_answer).await;
        (candidate, vec![])
    }
}

async fn guarded<F>(source: Source, timeout: Duration, fut: F) -> (AnswerCandidate, Vec<String>, f64)
where
    F: Future<Output = AgentOutput>,
{
    let started = Instant::now();
    match tokio::time::timeout(timeout, fut).await {
        Ok((c, w)) => (c, w, ms(started)),
        Err(_) => (
            AnswerCandidate::unavailable(source, format!("timed out after {timeout:?}")),
            vec![format!("{source}: timed out after {timeout:?}")],
            ms(started),
        ),
    }
}
