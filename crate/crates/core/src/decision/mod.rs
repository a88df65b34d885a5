//! Arbitration between agent answers.
//!
//! Each available answer is summarized, every pair of summaries is scored
//! with a ROUGE-L/BLEU fusion, and the mean pairwise score decides whether a
//! lightweight merge suffices or the expert model must reconcile them.

pub mod metrics;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::candidate::AnswerCandidate;
use crate::error::{HmragError, Result};
use crate::gateway::{complete_chat, ChatModel, ChatTurn, DecodingParams};
use crate::prompts::{render, PromptSet};
use metrics::{bleu, fuse, rouge_l, tokenize, uniform_weights, DEFAULT_BLEU_MAX_N};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionConfig {
    pub fusion_lambda: f64,
    pub consensus_threshold: f64,
    pub bleu_max_n: usize,
    pub summary_token_budget: u32,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            fusion_lambda: 0.5,
            consensus_threshold: 0.5,
            bleu_max_n: DEFAULT_BLEU_MAX_N,
            summary_token_budget: 64,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.fusion_lambda) {
            return Err(HmragError::Config(format!(
                "fusion_lambda must be in [0, 1], got {}",
                self.fusion_lambda
            )));
        }
        if !(0.0..=1.0).contains(&self.consensus_threshold) {
            return Err(HmragError::Config(format!(
                "consensus_threshold must be in [0, 1], got {}",
                self.consensus_threshold
            )));
        }
        if self.bleu_max_n == 0 || self.summary_token_budget == 0 {
            return Err(HmragError::Config("bleu_max_n and summary_token_budget must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Route {
    Lightweight,
    Expert,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairScore {
    pub rouge_l: f64,
    pub bleu: f64,
    pub fused: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsensusReport {
    /// Keyed `"<source>-<source>"` in vector, graph, web order.
    pub pair_scores: BTreeMap<String, PairScore>,
    pub mean_fused: f64,
    pub threshold: f64,
    pub consensus: bool,
    pub route: Route,
}

pub fn route_for(mean_fused: f64, threshold: f64) -> Route {
    if mean_fused >= threshold {
        Route::Lightweight
    } else {
        Route::Expert
    }
}

impl ConsensusReport {
    /// Builds the report from pairwise scores. An empty map (one answer)
    /// counts as full agreement.
    pub fn from_pairs(pair_scores: BTreeMap<String, PairScore>, threshold: f64) -> Self {
        let mean_fused = if pair_scores.is_empty() {
            1.0
        } else {
            pair_scores.values().map(|p| p.fused).sum::<f64>() / pair_scores.len() as f64
        };
        let route = route_for(mean_fused, threshold);
        Self {
            pair_scores,
            mean_fused,
            threshold,
            consensus: route == Route::Lightweight,
            route,
        }
    }
}

/// Fused agreement of two summarized candidates, BLEU symmetrized over
/// both directions.
pub fn fused_similarity(a: &AnswerCandidate, b: &AnswerCandidate, lambda: f64, max_n: usize) -> Result<PairScore> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(HmragError::InvalidInput(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let summary = |c: &AnswerCandidate| {
        c.summary
            .as_deref()
            .map(tokenize)
            .ok_or_else(|| HmragError::InvalidInput(format!("{} candidate has no summary", c.source)))
    };
    let (sa, sb) = (summary(a)?, summary(b)?);
    let weights = uniform_weights(max_n);
    let rouge = rouge_l(&sa, &sb).value;
    let bleu = (bleu(&sa, &sb, max_n, &weights)?.value + bleu(&sb, &sa, max_n, &weights)?.value) / 2.0;
    Ok(PairScore {
        rouge_l: rouge,
        bleu,
        fused: fuse(rouge, bleu, lambda),
    })
}

/// Scores every pair of available candidates.
pub fn consensus_report(candidates: &[AnswerCandidate], cfg: &DecisionConfig) -> Result<ConsensusReport> {
    let available: Vec<&AnswerCandidate> = candidates.iter().filter(|c| c.available).collect();
    let mut pairs = BTreeMap::new();
    for (i, a) in available.iter().enumerate() {
        for b in &available[i + 1..] {
            let (first, second) = if a.source <= b.source { (a, b) } else { (b, a) };
            let key = format!("{}-{}", first.source, second.source);
            pairs.insert(key, fused_similarity(first, second, cfg.fusion_lambda, cfg.bleu_max_n)?);
        }
    }
    Ok(ConsensusReport::from_pairs(pairs, cfg.consensus_threshold))
}

pub async fn summarize(
    mut candidate: AnswerCandidate,
    chat: &dyn ChatModel,
    template: &str,
    budget: u32,
) -> AnswerCandidate {
    if !candidate.available {
        return candidate;
    }
    if candidate.text.trim().is_empty() {
        candidate.mark_unavailable("empty answer");
        return candidate;
    }
    let budget_text = budget.to_string();
    let prompt = render(template, &[("answer", &candidate.text), ("budget", &budget_text)]);
    match complete_chat(chat, &[ChatTurn::user(prompt)], &DecodingParams::with_max_tokens(budget)).await {
        Ok(s) => candidate.summary = Some(s.trim().to_string()),
        Err(e) => candidate.mark_unavailable(format!("summarization failed: {e}")),
    }
    candidate
}

fn list_answers(candidates: &[&AnswerCandidate]) -> String {
    let mut out = String::new();
    for c in candidates {
        let _ = writeln!(out, "[{}] {}", c.source, c.text);
    }
    out.trim_end().to_string()
}

fn list_evidence(candidates: &[&AnswerCandidate]) -> String {
    let mut out = String::new();
    for c in candidates {
        if c.evidence.is_empty() {
            let _ = writeln!(out, "[{}] (none)", c.source);
        }
        for e in &c.evidence {
            let _ = writeln!(out, "[{}] {}", c.source, e);
        }
    }
    out.trim_end().to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub final_answer: String,
    pub report: ConsensusReport,
    /// Candidates after summarization.
    pub candidates: Vec<AnswerCandidate>,
    pub warnings: Vec<String>,
}

/// Summarizes, votes, and refines through the routed model.
///
/// If the refinement call itself fails, the candidate agreeing most with the
/// others is returned and a warning recorded.
pub async fn decide(
    query: &str,
    candidates: Vec<AnswerCandidate>,
    lightweight: &dyn ChatModel,
    expert: &dyn ChatModel,
    prompts: &PromptSet,
    cfg: &DecisionConfig,
) -> Result<Decision> {
    cfg.validate()?;
    let mut warnings = Vec::new();
    let available = candidates.iter().filter(|c| c.available).count();
    if available == 0 {
        return Err(HmragError::InvalidInput("no available answer candidates".into()));
    }
    let candidates: Vec<AnswerCandidate> = if available >= 2 {
        join_all(
            candidates
                .into_iter()
                .map(|c| summarize(c, lightweight, &prompts.summarize, cfg.summary_token_budget)),
        )
        .await
    } else {
        candidates
    };
    for c in candidates.iter().filter(|c| !c.available && c.error.is_some()) {
        if let Some(e) = c.error.as_deref().filter(|e| e.starts_with("summarization")) {
            warnings.push(format!("{}: {e}", c.source));
        }
    }
    let live: Vec<&AnswerCandidate> = candidates.iter().filter(|c| c.available).collect();
    if live.is_empty() {
        return Err(HmragError::InvalidInput("every candidate failed summarization".into()));
    }
    let report = if live.len() == 1 {
        ConsensusReport::from_pairs(BTreeMap::new(), cfg.consensus_threshold)
    } else {
        consensus_report(&candidates, cfg)?
    };

    let answers = list_answers(&live);
    let (model, prompt) = match report.route {
        Route::Lightweight => (
            lightweight,
            render(&prompts.refine_lightweight, &[("question", query), ("answers", &answers)]),
        ),
        Route::Expert => (
            expert,
            render(
                &prompts.refine_expert,
                &[("question", query), ("answers", &answers), ("evidence", &list_evidence(&live))],
            ),
        ),
    };
    let final_answer = match complete_chat(model, &[ChatTurn::user(prompt)], &DecodingParams::default()).await {
        Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
        outcome => {
            let reason = match outcome {
                Err(e) => e.to_string(),
                Ok(_) => "empty response".to_string(),
            };
            let best = most_agreeing(&live, &report);
            warnings.push(format!(
                "{:?} refinement failed ({reason}); using the {} answer",
                report.route, best.source
            ));
            best.text.clone()
        }
    };
    Ok(Decision {
        final_answer,
        report,
        candidates,
        warnings,
    })
}

fn most_agreeing<'a>(live: &[&'a AnswerCandidate], report: &ConsensusReport) -> &'a AnswerCandidate {
    let agreement = |c: &AnswerCandidate| -> f64 {
        report
            .pair_scores
            .iter()
            .filter(|(k, _)| k.split('-').any(|s| s == c.source.as_str()))
            .map(|(_, p)| p.fused)
            .sum()
    };
    live.iter()
        .copied()
        .max_by(|a, b| agreement(a).total_cmp(&agreement(b)).then(b.source.cmp(&a.source)))
        .expect("live candidates are non-empty")
}
