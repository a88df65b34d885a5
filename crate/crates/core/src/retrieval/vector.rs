//! Exact cosine top-k retrieval over the embedding index, plus answer
//! generation from the ranked passages.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::candidate::{AnswerCandidate, Source};
use crate::error::{HmragError, Result};
use crate::gateway::{complete_chat, embed_text, ChatModel, ChatTurn, DecodingParams, Embedder};
use crate::ingest::{Chunk, EmbeddingIndex};

pub const DEFAULT_TOP_K: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredChunk {
    pub chunk: Chunk,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalResult {
    pub query: String,
    pub top: Vec<ScoredChunk>,
    pub k: usize,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Cosine similarity, clamped to [-1, 1]. Zero vectors score 0.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    (dot / denom).clamp(-1.0, 1.0)
}

fn check_query(query_vec: &[f64], index: &EmbeddingIndex) -> Result<f64> {
    if query_vec.len() != index.dim() {
        return Err(HmragError::DimensionMismatch {
            expected: index.dim(),
            actual: query_vec.len(),
        });
    }
    let qn = norm(query_vec);
    if qn == 0.0 || !qn.is_finite() {
        return Err(HmragError::InvalidInput("query vector has zero or non-finite norm".into()));
    }
    Ok(qn)
}

fn raw_scores(query_vec: &[f64], index: &EmbeddingIndex) -> Result<Vec<f64>> {
    let qn = check_query(query_vec, index)?;
    let mut zero = 0usize;
    let scores = index
        .records()
        .iter()
        .map(|r| {
            let rn = norm(&r.vector);
            if rn == 0.0 {
                zero += 1;
                return 0.0;
            }
            let dot: f64 = query_vec.iter().zip(&r.vector).map(|(x, y)| x * y).sum();
            (dot / (qn * rn)).clamp(-1.0, 1.0)
        })
        .collect();
    if zero > 0 {
        tracing::warn!(records = zero, "zero-norm index records scored 0");
    }
    Ok(scores)
}

/// One score per index record, in index order.
pub fn score_all(query_vec: &[f64], index: &EmbeddingIndex) -> Result<Vec<ScoredChunk>> {
    let scores = raw_scores(query_vec, index)?;
    Ok(index
        .records()
        .iter()
        .zip(scores)
        .map(|(r, score)| ScoredChunk {
            chunk: r.chunk(),
            score,
        })
        .collect())
}

/// The `k` best records by descending score, ties by ascending chunk id.
pub fn top_k_by_vector(query: &str, query_vec: &[f64], index: &EmbeddingIndex, k: usize) -> Result<RetrievalResult> {
    if k == 0 {
        return Err(HmragError::InvalidInput("k must be at least 1".into()));
    }
    if index.is_empty() {
        return Err(HmragError::InvalidInput("index is empty".into()));
    }
    let scores = raw_scores(query_vec, index)?;
    let records = index.records();
    let rank = |a: &usize, b: &usize| {
        scores[*b]
            .total_cmp(&scores[*a])
            .then_with(|| records[*a].chunk_id.cmp(&records[*b].chunk_id))
    };
    let mut order: Vec<usize> = (0..records.len()).collect();
    let take = k.min(order.len());
    if take < order.len() {
        order.select_nth_unstable_by(take - 1, rank);
        order.truncate(take);
    }
    order.sort_unstable_by(rank);
    Ok(RetrievalResult {
        query: query.to_string(),
        top: order
            .into_iter()
            .map(|i| ScoredChunk {
                chunk: records[i].chunk(),
                score: scores[i],
            })
            .collect(),
        k,
    })
}

pub async fn retrieve_top_k(
    query: &str,
    index: &EmbeddingIndex,
    k: usize,
    embedder: &dyn Embedder,
) -> Result<RetrievalResult> {
    if index.is_empty() {
        return Err(HmragError::InvalidInput("index is empty".into()));
    }
    let query_vec = embed_text(embedder, query).await?;
    top_k_by_vector(query, &query_vec, index, k)
}

/// Joins header, question, and ranked passages. Each part carries its
/// character length so distinct inputs always give distinct prompts.
pub fn assemble_prompt(header: &str, query: &str, passages: &[&str]) -> String {
    let mut out = String::new();
    out.push_str(header.trim_end());
    let _ = write!(out, "\n\nQuestion ({} chars):\n{query}\n", query.chars().count());
    let _ = write!(out, "\nRetrieved passages: {}\n", passages.len());
    for (i, p) in passages.iter().enumerate() {
        let _ = write!(out, "\nPassage {} ({} chars):\n{p}\n", i + 1, p.chars().count());
    }
    out
}

/// Generates the vector agent's answer. Backend failures yield an
/// unavailable candidate rather than an error.
pub async fn answer(
    query: &str,
    result: &RetrievalResult,
    chat: &dyn ChatModel,
    header: &str,
) -> Result<AnswerCandidate> {
    if result.top.is_empty() {
        return Err(HmragError::InvalidInput("retrieval result is empty".into()));
    }
    let passages: Vec<&str> = result.top.iter().map(|s| s.chunk.text.as_str()).collect();
    let prompt = assemble_prompt(header, query, &passages);
    let params = DecodingParams::default();
    Ok(match complete_chat(chat, &[ChatTurn::user(prompt)], &params).await {
        Ok(text) => AnswerCandidate::new(
            Source::Vector,
            text.trim(),
            passages.iter().map(|p| p.to_string()).collect(),
        ),
        Err(e) => AnswerCandidate::unavailable(Source::Vector, e.to_string()),
    })
}
