//! Synthetic corpus and a rule-based scripted model shared by the
//! integration tests.
//!
//! Each document plants one fact, "the <topic> password is <answer>". The
//! scripted model reads whatever evidence its prompt carries and answers
//! with the option letter whose text matches the planted answer.

#![allow(dead_code)]

pub mod mock_http;

use std::sync::Arc;

use hmrag::backends::Backends;
use hmrag::gateway::{ChatTurn, HashingEmbedder, ScriptedCaptioner, ScriptedChat};
use hmrag::ingest::{ingest_corpus, CorpusRecord, IngestConfig, Stores};
use hmrag::orchestrator::eval::EvalRecord;
use hmrag::orchestrator::{Pipeline, PipelineConfig};
use hmrag::prompts::PromptSet;
use hmrag::retrieval::web::StubSearch;
use regex::Regex;
use serde_json::json;

pub const DIM: usize = 64;

pub const TOPICS: [&str; 20] = [
    "amber", "basil", "cobalt", "dahlia", "ember", "fjord", "garnet", "harbor", "indigo", "juniper", "kestrel",
    "lagoon", "meadow", "nectar", "obsidian", "prairie", "quartz", "raven", "sierra", "tundra",
];

pub const ANSWERS: [&str; 20] = [
    "apple", "bridge", "candle", "drum", "engine", "feather", "glove", "hammer", "island", "jacket", "kettle",
    "ladder", "mirror", "needle", "orange", "pencil", "quilt", "rocket", "saddle", "tunnel",
];

pub const NO_ANSWER: &str = "I cannot determine the answer.";

pub fn corpus() -> Vec<CorpusRecord> {
    TOPICS
        .iter()
        .zip(ANSWERS)
        .enumerate()
        .map(|(i, (topic, answer))| CorpusRecord {
            id: format!("doc-{i:02}"),
            text: format!(
                "Notes on the {topic} archive. The {topic} password is {answer}. \
                 The {topic} archive is kept by a small society of volunteers."
            ),
            image_ref: i.is_multiple_of(4).then(|| format!("img/{topic}.png")),
        })
        .collect()
}

pub fn captioner() -> ScriptedCaptioner {
    TOPICS
        .iter()
        .step_by(4)
        .fold(ScriptedCaptioner::new(), |c, t| {
            c.with_caption(format!("img/{t}.png"), format!("A photograph of the {t} archive entrance."))
        })
}

pub fn question(i: usize) -> EvalRecord {
    let gold = i % 4;
    let mut choices: Vec<String> = (1..4).map(|d| ANSWERS[(i + d) % 20].to_string()).collect();
    choices.insert(gold, ANSWERS[i].to_string());
    EvalRecord {
        id: format!("q-{i:02}"),
        question: format!("What is the {} password?", TOPICS[i]),
        choices,
        answer: gold,
        context: None,
        image_caption: None,
        tags: vec![if i.is_multiple_of(2) { "even" } else { "odd" }.to_string()],
    }
}

pub fn questions() -> Vec<EvalRecord> {
    (0..20).map(question).collect()
}

/// Web results keyed by the exact text the pipeline searches for.
pub fn search_stub(records: &[EvalRecord]) -> StubSearch {
    records.iter().fold(StubSearch::new(), |s, r| {
        let Some(i) = TOPICS.iter().position(|t| r.question.contains(&format!(" {t} "))) else {
            return s;
        };
        s.with_response(
            r.prompt(),
            json!({"organic": [{
                "title": format!("{} archive", TOPICS[i]),
                "link": format!("https://archives.example.org/{}", TOPICS[i]),
                "snippet": format!("The {} password is {}.", TOPICS[i], ANSWERS[i]),
                "position": 1
            }]}),
        )
    })
}

/// The answer line repeated most often in a refinement prompt.
fn majority(prompt: &str) -> Option<String> {
    let answers: Vec<&str> = prompt
        .lines()
        .filter(|l| l.starts_with('['))
        .filter_map(|l| l.split_once("] ").map(|(_, a)| a))
        .collect();
    let mut best: Option<(&str, usize)> = None;
    for a in &answers {
        let n = answers.iter().filter(|b| *b == a).count();
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((a, n));
        }
    }
    best.map(|(a, _)| a.to_string())
}

fn read_answer(prompt: &str) -> String {
    let asked = Regex::new(r"What is the (\w+) password\?").unwrap();
    let Some(topic) = asked.captures(prompt).map(|c| c[1].to_string()) else {
        return NO_ANSWER.to_string();
    };
    let fact = Regex::new(&format!(r"(?i)\b{topic}\W+password\W+is\W+(\w+)")).unwrap();
    let Some(answer) = fact.captures(prompt).map(|c| c[1].to_lowercase()) else {
        return NO_ANSWER.to_string();
    };
    let option = Regex::new(&format!(r"\(([A-Z])\) {answer}\b")).unwrap();
    match option.captures(prompt) {
        Some(c) => format!("The answer is {}.", &c[1]),
        None => format!("The password is {answer}."),
    }
}

fn extraction(prompt: &str) -> String {
    let fact = Regex::new(r"The (\w+) password is (\w+)\.").unwrap();
    let Some(c) = fact.captures(prompt) else {
        return "nothing to extract".to_string();
    };
    let (topic, answer) = (&c[1], &c[2]);
    let mut out = format!(
        "ENTITY|{topic}|the {topic} archive\nENTITY|{answer}|a password\nENTITY|{topic} society|volunteers\n\
         REL|{topic}|password is|{answer}\nREL|{topic} society|keeps|{topic}"
    );
    if prompt.contains("photograph") {
        out.push_str(&format!("\nENTITY|{topic} entrance|archive entrance"));
        out.push_str(&format!("\nREL|{topic}|has entrance|{topic} entrance"));
    }
    out
}

/// One model for every chat role, dispatching on the prompt's opening.
pub fn reader_chat() -> ScriptedChat {
    fn first(t: &[ChatTurn]) -> &str {
        &t[0].content
    }
    ScriptedChat::new()
        .with_rule("caption", |t| {
            first(t)
                .starts_with("An image caption was produced")
                .then(|| first(t).split("Raw caption:\n").nth(1).unwrap_or("").trim().to_string())
        })
        .with_rule("extract", |t| first(t).starts_with("Extract the entities").then(|| extraction(first(t))))
        .with_rule("judge", |t| first(t).starts_with("Decide whether").then(|| "single-intent".to_string()))
        .with_rule("keywords", |t| {
            first(t).starts_with("Extract search keywords").then(|| {
                let topic = TOPICS.iter().find(|k| first(t).contains(&format!(" {k} "))).copied();
                json!({"local_keywords": topic.into_iter().collect::<Vec<_>>(), "global_keywords": ["password"]})
                    .to_string()
            })
        })
        .with_rule("summary", |t| {
            first(t).starts_with("Summarize").then(|| {
                let answer = first(t).split("Answer:\n").nth(1).unwrap_or("").trim();
                answer.split_inclusive('.').next().unwrap_or(answer).trim().to_string()
            })
        })
        .with_rule("refine", |t| {
            first(t)
                .starts_with("Several retrieval agents")
                .then(|| majority(first(t)).unwrap_or_else(|| NO_ANSWER.to_string()))
        })
        .with_rule("final", |t| {
            first(t)
                .starts_with("The question below was answered in steps")
                .then(|| read_answer(first(t)))
        })
        .with_rule("reader", |t| first(t).starts_with("Answer the question").then(|| read_answer(first(t))))
}

pub fn backends(records: &[EvalRecord]) -> Backends {
    Backends::with_single_chat(
        Arc::new(reader_chat()),
        Arc::new(HashingEmbedder::new(DIM)),
        Arc::new(captioner()),
        Arc::new(search_stub(records)),
    )
}

pub async fn ingest(backends: &Backends) -> Stores {
    ingest_corpus(
        &corpus(),
        backends.chat.as_ref(),
        backends.embedder.as_ref(),
        backends.captioner.as_ref(),
        &PromptSet::default(),
        &IngestConfig::default(),
    )
    .await
    .expect("synthetic corpus ingests")
    .stores
}

pub async fn pipeline(backends: Backends, stores: Arc<Stores>, cfg: PipelineConfig) -> Pipeline {
    Pipeline::new(stores, backends, PromptSet::default(), cfg)
        .await
        .expect("pipeline builds")
}
