//! Multiple-choice accuracy over a JSONL dataset.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::Pipeline;
use crate::error::{HmragError, Result};

/// Choice labels, in order. At most this many choices are accepted.
pub const LETTERS: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub id: String,
    pub question: String,
    pub choices: Vec<String>,
    /// Index into `choices`.
    pub answer: usize,
    #[serde(default)]
    pub context: Option<String>,
    #[serde(default)]
    pub image_caption: Option<String>,
    #[serde(default)]
    pub tags: Vec<String>,
}

impl EvalRecord {
    fn validate(&self) -> std::result::Result<(), String> {
        if self.question.trim().is_empty() {
            return Err("question is empty".into());
        }
        if self.choices.is_empty() {
            return Err("no choices".into());
        }
        if self.choices.len() > LETTERS.len() {
            return Err(format!("{} choices exceeds the {} supported", self.choices.len(), LETTERS.len()));
        }
        if self.answer >= self.choices.len() {
            return Err(format!("answer index {} out of range", self.answer));
        }
        Ok(())
    }

    /// The text sent through the pipeline: question, optional context and
    /// caption, then lettered options.
    pub fn prompt(&self) -> String {
        let mut out = self.question.trim().to_string();
        if let Some(c) = self.context.as_deref().filter(|c| !c.trim().is_empty()) {
            let _ = write!(out, "\nContext: {}", c.trim());
        }
        if let Some(c) = self.image_caption.as_deref().filter(|c| !c.trim().is_empty()) {
            let _ = write!(out, "\nImage: {}", c.trim());
        }
        out.push_str("\nOptions:");
        for (letter, choice) in LETTERS.chars().zip(&self.choices) {
            let _ = write!(out, "\n({letter}) {choice}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkippedRecord {
    pub line: usize,
    pub id: Option<String>,
    pub reason: String,
}

/// Reads a dataset, setting malformed lines aside instead of failing.
pub fn load_dataset(path: &Path) -> Result<(Vec<EvalRecord>, Vec<SkippedRecord>)> {
    let raw = std::fs::read_to_string(path).map_err(|e| HmragError::io(path, e))?;
    let mut records = Vec::new();
    let mut skipped = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = match serde_json::from_str(line) {
            Ok(v) => v,
            Err(e) => {
                skipped.push(SkippedRecord {
                    line: i + 1,
                    id: None,
                    reason: format!("not JSON: {e}"),
                });
                continue;
            }
        };
        let id = value.get("id").and_then(Value::as_str).map(str::to_string);
        let checked = serde_json::from_value::<EvalRecord>(value)
            .map_err(|e| e.to_string())
            .and_then(|r| r.validate().map(|_| r));
        match checked {
            Ok(r) => records.push(r),
            Err(reason) => skipped.push(SkippedRecord { line: i + 1, id, reason }),
        }
    }
    Ok((records, skipped))
}

/// Picks a choice from free text: the first standalone capital letter that
/// labels a choice, else a choice whose text equals the whole answer.
pub fn extract_choice(answer: &str, choices: &[String]) -> Option<usize> {
    let valid = &LETTERS[..choices.len().min(LETTERS.len())];
    let chars: Vec<char> = answer.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        let Some(pos) = valid.find(*c) else { continue };
        let before = i.checked_sub(1).map(|j| chars[j]);
        let after = chars.get(i + 1).copied();
        let standalone = |n: Option<char>| n.is_none_or(|n| !n.is_alphanumeric());
        if standalone(before) && standalone(after) {
            return Some(pos);
        }
    }
    let norm = |s: &str| {
        s.trim()
            .trim_end_matches(['.', '!'])
            .trim()
            .to_lowercase()
    };
    let target = norm(answer);
    choices.iter().position(|c| norm(c) == target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub gold: usize,
    pub predicted: Option<usize>,
    pub correct: bool,
    pub final_answer: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub tags: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TagScore {
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Records evaluated, excluding skipped ones.
    pub total: usize,
    pub correct: usize,
    pub accuracy: f64,
    pub skipped: Vec<SkippedRecord>,
    pub per_tag: BTreeMap<String, TagScore>,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    pub fn from_predictions(predictions: Vec<Prediction>, skipped: Vec<SkippedRecord>) -> Self {
        let ratio = |c: usize, t: usize| if t == 0 { 0.0 } else { c as f64 / t as f64 };
        let mut per_tag: BTreeMap<String, TagScore> = BTreeMap::new();
        for p in &predictions {
            for tag in &p.tags {
                let s = per_tag.entry(tag.clone()).or_default();
                s.total += 1;
                s.correct += usize::from(p.correct);
            }
        }
        for s in per_tag.values_mut() {
            s.accuracy = ratio(s.correct, s.total);
        }
        let correct = predictions.iter().filter(|p| p.correct).count();
        Self {
            total: predictions.len(),
            correct,
            accuracy: ratio(correct, predictions.len()),
            skipped,
            per_tag,
            predictions,
        }
    }
}

/// Answers every record in order. A failed query counts as wrong.
pub async fn run_eval(pipeline: &Pipeline, dataset: &Path) -> Result<EvalReport> {
    let (records, skipped) = load_dataset(dataset)?;
    Ok(evaluate(pipeline, &records, skipped).await)
}

pub async fn evaluate(pipeline: &Pipeline, records: &[EvalRecord], skipped: Vec<SkippedRecord>) -> EvalReport {
    let mut predictions = Vec::with_capacity(records.len());
    for r in records {
        let (final_answer, error) = match pipeline.run_query(&r.prompt()).await {
            Ok(t) => (t.final_answer, None),
            Err(f) => (None, Some(f.error.to_string())),
        };
        let predicted = final_answer.as_deref().and_then(|a| extract_choice(a, &r.choices));
        predictions.push(Prediction {
            id: r.id.clone(),
            gold: r.answer,
            predicted,
            correct: predicted == Some(r.answer),
            final_answer,
            error,
            tags: r.tags.clone(),
        });
    }
    EvalReport::from_predictions(predictions, skipped)
}
