//! Agreement metrics between answer summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{HmragError, Result};

pub const DEFAULT_BLEU_MAX_N: usize = 4;

/// Case-folds and splits on whitespace and punctuation.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// A score in [0, 1]. `degenerate` marks a zero forced by empty input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricScore {
    pub value: f64,
    pub degenerate: bool,
}

impl MetricScore {
    fn ok(value: f64) -> Self {
        Self {
            value,
            degenerate: false,
        }
    }

    fn degenerate() -> Self {
        Self {
            value: 0.0,
            degenerate: true,
        }
    }
}

pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// LCS length over the longer sequence's length.
pub fn rouge_l<T: PartialEq>(a: &[T], b: &[T]) -> MetricScore {
    if a.is_empty() || b.is_empty() {
        return MetricScore::degenerate();
    }
    MetricScore::ok(lcs_len(a, b) as f64 / a.len().max(b.len()) as f64)
}

pub fn uniform_weights(max_n: usize) -> Vec<f64> {
    vec![1.0 / max_n as f64; max_n]
}

fn ngram_counts<T: Eq + std::hash::Hash>(seq: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    for gram in seq.windows(n) {
        *counts.entry(gram).or_default() += 1;
    }
    counts
}

/// BLEU with clipped n-gram precision and no smoothing.
///
/// Orders run from 1 to `min(max_n, |candidate|)`. Any zero precision makes
/// the score 0. The length factor is `min(1, |reference| / |candidate|)`,
/// so it penalizes candidates longer than the reference.
pub fn bleu<T: Eq + std::hash::Hash>(
    candidate: &[T],
    reference: &[T],
    max_n: usize,
    weights: &[f64],
) -> Result<MetricScore> {
    if max_n == 0 {
        return Err(HmragError::InvalidInput("bleu max_n must be at least 1".into()));
    }
    if weights.len() != max_n {
        return Err(HmragError::InvalidInput(format!(
            "bleu needs {max_n} weights, got {}",
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 || weights.iter().any(|w| *w < 0.0) {
        return Err(HmragError::InvalidInput(format!(
            "bleu weights must be non-negative and sum to 1, got {total}"
        )));
    }
    if candidate.is_empty() || reference.is_empty() {
        return Ok(MetricScore::degenerate());
    }
    let orders = max_n.min(candidate.len());
    let mut log_sum = 0.0;
    for (n, w) in (1..=orders).zip(weights) {
        let cand = ngram_counts(candidate, n);
        let refs = ngram_counts(reference, n);
        let matched: usize = cand
            .iter()
            .map(|(gram, c)| (*c).min(refs.get(gram).copied().unwrap_or(0)))
            .sum();
        if matched == 0 {
            return Ok(MetricScore::ok(0.0));
        }
        let possible = candidate.len() - n + 1;
        log_sum += w * (matched as f64 / possible as f64).ln();
    }
    let brevity = (reference.len() as f64 / candidate.len() as f64).min(1.0);
    Ok(MetricScore::ok((log_sum.exp() * brevity).clamp(0.0, 1.0)))
}

/// Mean of BLEU in both directions.
pub fn symmetric_bleu<T: Eq + std::hash::Hash>(a: &[T], b: &[T], max_n: usize) -> Result<f64> {
    let w = uniform_weights(max_n);
    Ok((bleu(a, b, max_n, &w)?.value + bleu(b, a, max_n, &w)?.value) / 2.0)
}

/// `lambda * rouge + (1 - lambda) * bleu`.
pub fn fuse(rouge: f64, bleu: f64, lambda: f64) -> f64 {
    lambda * rouge + (1.0 - lambda) * bleu
}
