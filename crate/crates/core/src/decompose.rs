//! Query analysis: a binary multi-intent judgment followed, for multi-intent
//! questions, by decomposition into two or three sub-questions.

use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{HmragError, Result};
use crate::gateway::{complete_chat, ChatModel, ChatTurn, DecodingParams};
use crate::prompts::render;

pub const MIN_SUB_QUERIES: usize = 2;
pub const MAX_SUB_QUERIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubQueryPlan {
    pub original: String,
    pub sub_queries: Vec<String>,
    pub multi_intent: bool,
}

impl SubQueryPlan {
    pub fn single(question: &str) -> Self {
        Self {
            original: question.to_string(),
            sub_queries: vec![question.to_string()],
            multi_intent: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.sub_queries.len();
        let ok = if self.multi_intent {
            (MIN_SUB_QUERIES..=MAX_SUB_QUERIES).contains(&n)
        } else {
            self.sub_queries == [self.original.clone()]
        };
        if ok {
            Ok(())
        } else {
            Err(HmragError::Invariant(format!(
                "plan with multi_intent={} has {n} sub-queries",
                self.multi_intent
            )))
        }
    }
}

/// Plan plus anything that degraded along the way.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Decomposition {
    pub plan: SubQueryPlan,
    pub warnings: Vec<String>,
}

/// Maps a judgment response to a boolean by case-insensitive token scan.
pub fn classify_intent(response: &str) -> Result<bool> {
    let lower = response.to_lowercase();
    match (lower.contains("multi"), lower.contains("single")) {
        (_, true) => Ok(false),
        (true, false) => Ok(true),
        (false, false) => Err(HmragError::BackendResponse(format!(
            "intent judgment is neither single nor multi: {response:?}"
        ))),
    }
}

pub async fn judge_multi_intent(question: &str, chat: &dyn ChatModel, template: &str) -> Result<bool> {
    if question.trim().is_empty() {
        return Err(HmragError::InvalidInput("question is empty".into()));
    }
    let prompt = render(template, &[("question", question)]);
    let response = complete_chat(chat, &[ChatTurn::user(prompt)], &DecodingParams::default()).await?;
    classify_intent(&response)
}

static INLINE_MARKER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"([?.!])\s+((?:[Qq]\d{1,2}\s*[.):]?|\(?\d{1,2}[.):]))\s+").unwrap()
});

static PREFIX: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(?i)^\s*(?:[-*•]+\s*|\(\d{1,2}\)\s*|(?:sub-?question\s*|question\s*|q)?\d{1,2}\s*[.):]\s*|q\d{1,2}\s+)")
        .unwrap()
});

/// Splits a decomposition response into sub-questions, dropping blank
/// lines, list markers, numbering, and header lines ending in a colon.
pub fn parse_sub_questions(response: &str) -> Vec<String> {
    let split = INLINE_MARKER.replace_all(response, "$1\n$2 ");
    split
        .lines()
        .map(|line| PREFIX.replace(line, "").trim().to_string())
        .filter(|line| !line.is_empty() && !line.ends_with(':'))
        .collect()
}

pub async fn decompose(
    question: &str,
    chat: &dyn ChatModel,
    judge_template: &str,
    decompose_template: &str,
) -> Result<Decomposition> {
    if question.trim().is_empty() {
        return Err(HmragError::InvalidInput("question is empty".into()));
    }
    let mut warnings = Vec::new();
    let multi = match judge_multi_intent(question, chat, judge_template).await {
        Ok(multi) => multi,
        Err(e) => {
            warnings.push(format!("intent judgment failed, treating as single-intent: {e}"));
            false
        }
    };
    if !multi {
        return Ok(Decomposition {
            plan: SubQueryPlan::single(question),
            warnings,
        });
    }

    let prompt = render(decompose_template, &[("question", question)]);
    let response = match complete_chat(chat, &[ChatTurn::user(prompt)], &DecodingParams::default()).await {
        Ok(r) => r,
        Err(e) => {
            warnings.push(format!("decomposition call failed, treating as single-intent: {e}"));
            return Ok(Decomposition {
                plan: SubQueryPlan::single(question),
                warnings,
            });
        }
    };
    let mut subs = parse_sub_questions(&response);
    if subs.len() < MIN_SUB_QUERIES {
        warnings.push(format!(
            "decomposition produced {} sub-question(s), treating as single-intent",
            subs.len()
        ));
        return Ok(Decomposition {
            plan: SubQueryPlan::single(question),
            warnings,
        });
    }
    if subs.len() > MAX_SUB_QUERIES {
        warnings.push(format!(
            "decomposition produced {} sub-questions, keeping the first {MAX_SUB_QUERIES}",
            subs.len()
        ));
        subs.truncate(MAX_SUB_QUERIES);
    }
    let plan = SubQueryPlan {
        original: question.to_string(),
        sub_queries: subs,
        multi_intent: true,
    };
    plan.validate()?;
    Ok(Decomposition { plan, warnings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ScriptedChat;
    use crate::prompts::PromptSet;

    fn scripted(judgment: &'static str, decomposition: &'static str) -> ScriptedChat {
        ScriptedChat::new()
            .with_rule("judge", move |t| {
                t[0].content.starts_with("Decide whether").then(|| judgment.to_string())
            })
            .with_rule("decompose", move |t| {
                t[0].content.starts_with("Decompose").then(|| decomposition.to_string())
            })
    }

    async fn run(chat: &ScriptedChat, q: &str) -> Decomposition {
        let p = PromptSet::default();
        decompose(q, chat, &p.judge, &p.decompose).await.unwrap()
    }

    #[test]
    fn intent_token_scan() {
        assert!(classify_intent("multi-intent").unwrap());
        assert!(classify_intent("MULTI").unwrap());
        assert!(!classify_intent("single-intent").unwrap());
        assert!(!classify_intent("single, not multi").unwrap());
        assert!(classify_intent("unclear").is_err());
    }

    #[tokio::test]
    async fn single_intent_passes_through_without_decomposing() {
        let chat = scripted("single-intent", "1. a?\n2. b?");
        let d = run(&chat, "What is photosynthesis?").await;
        assert_eq!(d.plan, SubQueryPlan::single("What is photosynthesis?"));
        assert_eq!(chat.rule_hits("decompose"), 0);
        assert!(d.warnings.is_empty());
    }

    #[tokio::test]
    async fn unclear_judgment_falls_back_to_single() {
        let chat = scripted("unclear", "1. a?\n2. b?");
        let d = run(&chat, "Q?").await;
        assert!(!d.plan.multi_intent);
        assert_eq!(d.warnings.len(), 1);
        assert_eq!(chat.rule_hits("decompose"), 0);
    }

    #[tokio::test]
    async fn inline_numbered_decomposition() {
        let chat = scripted(
            "multi-intent",
            "1. What mineral is shown? 2. Which property identifies it?",
        );
        let d = run(&chat, "Which property identifies the mineral shown?").await;
        assert!(d.plan.multi_intent);
        assert_eq!(
            d.plan.sub_queries,
            vec!["What mineral is shown?", "Which property identifies it?"]
        );
    }

    #[tokio::test]
    async fn five_lines_truncate_to_three() {
        let chat = scripted("multi-intent", "1. a?\n2. b?\n3. c?\n4. d?\n5. e?");
        let d = run(&chat, "Q?").await;
        assert_eq!(d.plan.sub_queries, vec!["a?", "b?", "c?"]);
        d.plan.validate().unwrap();
    }

    #[tokio::test]
    async fn one_sub_question_falls_back() {
        let chat = scripted("multi-intent", "1. only one?");
        let d = run(&chat, "Q?").await;
        assert_eq!(d.plan, SubQueryPlan::single("Q?"));
    }

    #[tokio::test]
    async fn empty_question_rejected() {
        let chat = scripted("single", "");
        let p = PromptSet::default();
        assert!(decompose(" ", &chat, &p.judge, &p.decompose).await.is_err());
    }

    #[test]
    fn parses_ten_formats() {
        let want = vec!["What is A?".to_string(), "Why is B?".to_string()];
        let fixtures = [
            "1. What is A?\n2. Why is B?",
            "1) What is A?\n2) Why is B?",
            "- What is A?\n- Why is B?",
            "* What is A?\n* Why is B?",
            "Q1: What is A?\nQ2: Why is B?",
            "What is A?\nWhy is B?",
            "1. What is A? 2. Why is B?",
            "\n\n1. What is A?\n\n\n2. Why is B?\n",
            "(1) What is A?\n(2) Why is B?",
            "Sub-questions:\nSub-question 1: What is A?\nSub-question 2: Why is B?",
            "• What is A?\n• Why is B?",
        ];
        for f in fixtures {
            assert_eq!(parse_sub_questions(f), want, "format {f:?}");
        }
    }

    #[test]
    fn numbers_inside_questions_survive() {
        assert_eq!(
            parse_sub_questions("1. How many moons do 2 planets have?\n2. Which is larger?"),
            vec!["How many moons do 2 planets have?", "Which is larger?"]
        );
    }
}
