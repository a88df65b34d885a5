//! Relational retrieval over the knowledge graph.
//!
//! A query is reduced to entity-level (local) and theme-level (global)
//! keywords. Local keywords are matched against entity names and global
//! keywords against relation names by embedding cosine; any triplet whose
//! best match clears `tau` enters the subgraph, which is then widened by one
//! hop before the lightweight model answers from it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::vector::cosine;
use crate::candidate::{AnswerCandidate, Source};
use crate::error::{HmragError, Result};
use crate::gateway::{complete_chat, embed_text, ChatModel, ChatTurn, DecodingParams, Embedder};
use crate::ingest::{KnowledgeGraph, Triplet};
use crate::prompts::render;

pub const DEFAULT_TAU: f64 = 0.3;

const STOPWORDS: &[&str] = &[
    "a", "about", "an", "and", "are", "as", "at", "be", "been", "but", "by", "can", "did", "do", "does", "for",
    "from", "had", "has", "have", "how", "i", "if", "in", "into", "is", "it", "its", "of", "on", "or", "should",
    "so", "than", "that", "the", "their", "them", "then", "there", "these", "they", "this", "those", "to", "was",
    "were", "what", "when", "where", "which", "who", "whom", "whose", "why", "will", "with", "would", "you",
    "your",
];

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub local: Vec<String>,
    #[serde(rename = "global")]
    pub global_: Vec<String>,
}

impl KeywordSet {
    pub fn new<L, G>(local: L, global: G) -> Self
    where
        L: IntoIterator,
        L::Item: AsRef<str>,
        G: IntoIterator,
        G::Item: AsRef<str>,
    {
        Self {
            local: normalize(local),
            global_: normalize(global),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.local.is_empty() && self.global_.is_empty()
    }
}

fn normalize<I>(items: I) -> Vec<String>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    let mut seen = BTreeSet::new();
    items
        .into_iter()
        .map(|s| s.as_ref().split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase())
        .filter(|s| !s.is_empty() && seen.insert(s.clone()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordExtraction {
    pub keywords: KeywordSet,
    /// True when the model response was unusable and keywords came from the
    /// query's content words.
    pub fallback: bool,
}

/// Reads `local_keywords`/`global_keywords` from the first JSON object in
/// the response.
pub fn parse_keywords(response: &str) -> Option<KeywordSet> {
    let start = response.find('{')?;
    let end = response.rfind('}')?;
    if end < start {
        return None;
    }
    let value: Value = serde_json::from_str(&response[start..=end]).ok()?;
    let list = |key: &str| -> Option<Vec<String>> {
        match value.get(key)? {
            Value::Array(items) => Some(items.iter().filter_map(|v| v.as_str().map(str::to_string)).collect()),
            Value::String(s) => Some(s.split(',').map(str::to_string).collect()),
            _ => None,
        }
    };
    let local = list("local_keywords");
    let global = list("global_keywords");
    if local.is_none() && global.is_none() {
        return None;
    }
    Some(KeywordSet::new(local.unwrap_or_default(), global.unwrap_or_default()))
}

/// Content words of the query: lowercase alphanumeric tokens minus stopwords.
pub fn fallback_keywords(query: &str) -> KeywordSet {
    let words = query
        .split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| !w.is_empty() && !STOPWORDS.contains(&w.as_str()));
    KeywordSet::new(words, std::iter::empty::<&str>())
}

pub async fn extract_keywords(query: &str, chat: &dyn ChatModel, template: &str) -> Result<KeywordExtraction> {
    if query.trim().is_empty() {
        return Err(HmragError::InvalidInput("query is empty".into()));
    }
    let prompt = render(template, &[("question", query)]);
    let response = complete_chat(chat, &[ChatTurn::user(prompt)], &DecodingParams::default()).await?;
    Ok(match parse_keywords(&response) {
        Some(keywords) => KeywordExtraction {
            keywords,
            fallback: false,
        },
        None => KeywordExtraction {
            keywords: fallback_keywords(query),
            fallback: true,
        },
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subgraph {
    pub triplets: BTreeSet<Triplet>,
    pub seed_entities: BTreeSet<String>,
    pub expanded_entities: BTreeSet<String>,
}

impl Subgraph {
    pub fn is_empty(&self) -> bool {
        self.triplets.is_empty() && self.seed_entities.is_empty() && self.expanded_entities.is_empty()
    }
}

/// Best keyword match per entity key and per relation name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelevanceScores {
    pub entity: BTreeMap<String, f64>,
    pub relation: BTreeMap<String, f64>,
}

/// Selects the threshold-gated subgraph from precomputed relevance scores.
///
/// Local phase: entities scoring above `tau` become seeds and bring their
/// incident triplets. Global phase: triplets whose relation scores above
/// `tau` are added.
pub fn select_subgraph(graph: &KnowledgeGraph, scores: &RelevanceScores, tau: f64) -> Subgraph {
    let above = |s: Option<&f64>| s.is_some_and(|s| *s > tau);
    let seeds: BTreeSet<String> = graph
        .entities()
        .keys()
        .filter(|k| above(scores.entity.get(*k)))
        .cloned()
        .collect();
    let mut triplets: BTreeSet<Triplet> = graph
        .triplets()
        .iter()
        .filter(|t| seeds.contains(&t.head) || seeds.contains(&t.tail))
        .cloned()
        .collect();
    triplets.extend(
        graph
            .triplets()
            .iter()
            .filter(|t| above(scores.relation.get(&t.relation)))
            .cloned(),
    );
    let mut expanded = seeds.clone();
    for t in &triplets {
        expanded.insert(t.head.clone());
        expanded.insert(t.tail.clone());
    }
    Subgraph {
        triplets,
        seed_entities: seeds,
        expanded_entities: expanded,
    }
}

/// Memoizes embeddings of graph labels across queries.
#[derive(Debug, Default)]
pub struct LabelEmbeddings {
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl LabelEmbeddings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Embeds every entity name and relation label of `graph` up front, so
    /// later queries only embed their own keywords.
    pub async fn warm(&self, graph: &KnowledgeGraph, embedder: &dyn Embedder) -> Result<usize> {
        let labels: BTreeSet<&str> = graph
            .entities()
            .values()
            .map(|e| e.name.as_str())
            .chain(graph.triplets().iter().map(|t| t.relation.as_str()))
            .filter(|l| !l.trim().is_empty())
            .collect();
        for label in &labels {
            self.get(label, embedder).await?;
        }
        Ok(labels.len())
    }

    pub fn len(&self) -> usize {
        self.cache.lock().expect("label cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    async fn get(&self, text: &str, embedder: &dyn Embedder) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.lock().expect("label cache poisoned").get(text) {
            return Ok(v.clone());
        }
        let v = embed_text(embedder, text).await?;
        self.cache
            .lock()
            .expect("label cache poisoned")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

async fn best_match(
    keyword_vecs: &[Vec<f64>],
    labels: impl Iterator<Item = (String, String)>,
    embedder: &dyn Embedder,
    cache: &LabelEmbeddings,
) -> Result<BTreeMap<String, f64>> {
    let mut out = BTreeMap::new();
    if keyword_vecs.is_empty() {
        return Ok(out);
    }
    for (key, label) in labels {
        let v = cache.get(&label, embedder).await?;
        let best = keyword_vecs
            .iter()
            .map(|k| cosine(k, &v))
            .fold(f64::NEG_INFINITY, f64::max);
        out.insert(key, best);
    }
    Ok(out)
}

pub async fn score_relevance(
    keywords: &KeywordSet,
    graph: &KnowledgeGraph,
    embedder: &dyn Embedder,
    cache: &LabelEmbeddings,
) -> Result<RelevanceScores> {
    let mut local = Vec::with_capacity(keywords.local.len());
    for k in &keywords.local {
        local.push(embed_text(embedder, k).await?);
    }
    let mut global = Vec::with_capacity(keywords.global_.len());
    for k in &keywords.global_ {
        global.push(embed_text(embedder, k).await?);
    }
    let entity_labels = graph
        .entities()
        .iter()
        .filter(|(_, e)| !e.name.trim().is_empty())
        .map(|(key, e)| (key.clone(), e.name.clone()));
    let relations: BTreeSet<&str> = graph
        .triplets()
        .iter()
        .map(|t| t.relation.as_str())
        .filter(|r| !r.trim().is_empty())
        .collect();
    let relation_labels = relations.into_iter().map(|r| (r.to_string(), r.to_string()));
    Ok(RelevanceScores {
        entity: best_match(&local, entity_labels, embedder, cache).await?,
        relation: best_match(&global, relation_labels, embedder, cache).await?,
    })
}

pub async fn retrieve_subgraph(
    keywords: &KeywordSet,
    graph: &KnowledgeGraph,
    tau: f64,
    embedder: &dyn Embedder,
    cache: &LabelEmbeddings,
) -> Result<Subgraph> {
    if graph.is_empty() {
        return Err(HmragError::InvalidInput("knowledge graph is empty".into()));
    }
    if !(0.0..=1.0).contains(&tau) {
        return Err(HmragError::InvalidInput(format!("tau must be in [0, 1], got {tau}")));
    }
    let scores = score_relevance(keywords, graph, embedder, cache).await?;
    Ok(select_subgraph(graph, &scores, tau))
}

/// Widens the subgraph by one hop around its seeds, its entities, and the
/// endpoints of its triplets.
pub fn expand_one_hop(sub: &Subgraph, graph: &KnowledgeGraph) -> Subgraph {
    let mut retrieved: BTreeSet<String> = sub.seed_entities.union(&sub.expanded_entities).cloned().collect();
    for t in &sub.triplets {
        retrieved.insert(t.head.clone());
        retrieved.insert(t.tail.clone());
    }
    let adjacency = graph.adjacency();
    let mut expanded = retrieved.clone();
    for node in &retrieved {
        if let Some(neighbors) = adjacency.get(node.as_str()) {
            expanded.extend(neighbors.iter().map(|n| n.to_string()));
        }
    }
    let mut triplets = sub.triplets.clone();
    triplets.extend(
        graph
            .triplets()
            .iter()
            .filter(|t| {
                expanded.contains(&t.head)
                    && expanded.contains(&t.tail)
                    && (retrieved.contains(&t.head) || retrieved.contains(&t.tail))
            })
            .cloned(),
    );
    Subgraph {
        triplets,
        seed_entities: sub.seed_entities.clone(),
        expanded_entities: expanded,
    }
}

/// Renders the subgraph as prompt lines: one per triplet, then one per
/// entity that has a description or a visual location.
pub fn serialize_subgraph(sub: &Subgraph, graph: &KnowledgeGraph) -> Vec<String> {
    let name = |key: &str| graph.entity(key).map_or(key.to_string(), |e| e.name.clone());
    let mut lines: Vec<String> = sub
        .triplets
        .iter()
        .map(|t| format!("{} -[{}]-> {}", name(&t.head), t.relation, name(&t.tail)))
        .collect();
    for key in &sub.expanded_entities {
        let Some(e) = graph.entity(key) else { continue };
        let mut line = String::new();
        if !e.description.is_empty() {
            line = format!("{}: {}", e.name, e.description);
        }
        if let Some(loc) = &e.visual_location {
            if line.is_empty() {
                line = e.name.clone();
            }
            line.push_str(&format!(" [image: {loc}]"));
        }
        if !line.is_empty() {
            lines.push(line);
        }
    }
    lines
}

pub const NO_GRAPH_EVIDENCE: &str = "(no relevant knowledge-graph facts were found)";

pub async fn answer(
    query: &str,
    sub: &Subgraph,
    graph: &KnowledgeGraph,
    chat: &dyn ChatModel,
    template: &str,
) -> AnswerCandidate {
    let lines = serialize_subgraph(sub, graph);
    let evidence = if lines.is_empty() {
        NO_GRAPH_EVIDENCE.to_string()
    } else {
        lines.join("\n")
    };
    let prompt = render(template, &[("question", query), ("evidence", &evidence)]);
    match complete_chat(chat, &[ChatTurn::user(prompt)], &DecodingParams::default()).await {
        Ok(text) => AnswerCandidate::new(Source::Graph, text.trim(), lines),
        Err(e) => AnswerCandidate::unavailable(Source::Graph, e.to_string()),
    }
}
