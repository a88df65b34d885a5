use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::FusedDocument;
use crate::error::{HmragError, Result};
use crate::gateway::{complete_chat, ChatModel, ChatTurn, DecodingParams};
use crate::prompts::render;

/// Case-folded, whitespace-collapsed form used as an entity key.
pub fn entity_key(name: &str) -> String {
    name.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub name: String,
    pub description: String,
    #[serde(default)]
    pub visual_location: Option<String>,
}

/// A relation between two entities, stored by entity key.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub head: String,
    pub relation: String,
    pub tail: String,
}

impl Triplet {
    pub fn new(head: &str, relation: &str, tail: &str) -> Self {
        Self {
            head: entity_key(head),
            relation: entity_key(relation),
            tail: entity_key(tail),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
enum GraphLine {
    Entity(Entity),
    Triplet(Triplet),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct KnowledgeGraph {
    entities: BTreeMap<String, Entity>,
    triplets: BTreeSet<Triplet>,
}

impl KnowledgeGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entities(&self) -> &BTreeMap<String, Entity> {
        &self.entities
    }

    pub fn triplets(&self) -> &BTreeSet<Triplet> {
        &self.triplets
    }

    pub fn entity(&self, key: &str) -> Option<&Entity> {
        self.entities.get(key)
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    /// Inserts an entity or merges into the existing node with the same key.
    /// The first non-empty description and visual location win.
    pub fn add_entity(&mut self, name: &str, description: &str, visual_location: Option<&str>) -> String {
        let key = entity_key(name);
        let entry = self.entities.entry(key.clone()).or_insert_with(|| Entity {
            name: name.split_whitespace().collect::<Vec<_>>().join(" "),
            description: String::new(),
            visual_location: None,
        });
        if entry.description.is_empty() {
            entry.description = description.trim().to_string();
        }
        if entry.visual_location.is_none() {
            entry.visual_location = visual_location.map(str::to_string);
        }
        key
    }

    /// Adds a triplet, creating either endpoint with an empty description
    /// when it is not yet known.
    pub fn add_triplet(&mut self, head: &str, relation: &str, tail: &str, visual_location: Option<&str>) -> bool {
        let head = self.add_entity(head, "", visual_location);
        let tail = self.add_entity(tail, "", visual_location);
        self.triplets.insert(Triplet {
            head,
            relation: entity_key(relation),
            tail,
        })
    }

    pub fn merge(&mut self, other: KnowledgeGraph) {
        for (_, e) in other.entities {
            self.add_entity(&e.name, &e.description, e.visual_location.as_deref());
        }
        for t in other.triplets {
            self.triplets.insert(t);
        }
    }

    /// Undirected neighbor sets keyed by entity key.
    pub fn adjacency(&self) -> BTreeMap<&str, BTreeSet<&str>> {
        let mut adj: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for t in &self.triplets {
            adj.entry(t.head.as_str()).or_default().insert(t.tail.as_str());
            adj.entry(t.tail.as_str()).or_default().insert(t.head.as_str());
        }
        adj
    }

    pub fn validate(&self) -> Result<()> {
        for t in &self.triplets {
            for end in [&t.head, &t.tail] {
                if !self.entities.contains_key(end) {
                    return Err(HmragError::Invariant(format!(
                        "triplet endpoint {end} is not an entity"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| HmragError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for e in self.entities.values() {
            let line = serde_json::to_string(&GraphLine::Entity(e.clone()))?;
            writeln!(w, "{line}").map_err(|e| HmragError::io(path, e))?;
        }
        for t in &self.triplets {
            let line = serde_json::to_string(&GraphLine::Triplet(t.clone()))?;
            writeln!(w, "{line}").map_err(|e| HmragError::io(path, e))?;
        }
        w.flush().map_err(|e| HmragError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| HmragError::io(path, e))?;
        let mut graph = Self::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| HmragError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            match serde_json::from_str::<GraphLine>(&line)? {
                GraphLine::Entity(e) => {
                    graph.add_entity(&e.name, &e.description, e.visual_location.as_deref());
                }
                GraphLine::Triplet(t) => {
                    if !graph.entities.contains_key(&t.head) || !graph.entities.contains_key(&t.tail) {
                        return Err(HmragError::Invariant(format!(
                            "triplet ({}, {}, {}) precedes or lacks its entities",
                            t.head, t.relation, t.tail
                        )));
                    }
                    graph.triplets.insert(t);
                }
            }
        }
        Ok(graph)
    }
}

/// Parses line-delimited `ENTITY|name|description` and
/// `REL|head|relation|tail` output. Returns `None` when no line parses.
pub fn parse_extraction(output: &str, visual_location: Option<&str>) -> Option<KnowledgeGraph> {
    let mut graph = KnowledgeGraph::new();
    let mut parsed = 0usize;
    for raw in output.lines() {
        let line = raw.trim().trim_start_matches(['-', '*', ' ']).trim();
        let fields: Vec<&str> = line.split('|').map(str::trim).collect();
        match fields.first().map(|f| f.to_ascii_uppercase()).as_deref() {
            Some("ENTITY") if fields.len() >= 2 && !fields[1].is_empty() => {
                let description = fields[2..].join("|");
                graph.add_entity(fields[1], &description, visual_location);
                parsed += 1;
            }
            Some("REL") | Some("RELATION")
                if fields.len() >= 4 && fields[1..4].iter().all(|f| !f.is_empty()) =>
            {
                graph.add_triplet(fields[1], fields[2], fields[3], visual_location);
                parsed += 1;
            }
            _ => {}
        }
    }
    (parsed > 0).then_some(graph)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractionReport {
    pub documents: usize,
    pub skipped: Vec<String>,
}

/// Runs one extraction call per document and merges the results in
/// document order.
pub async fn extract_graph(
    docs: &[FusedDocument],
    chat: &dyn ChatModel,
    template: &str,
    concurrency: usize,
) -> Result<(KnowledgeGraph, ExtractionReport)> {
    if docs.is_empty() {
        return Err(HmragError::InvalidInput("no documents to extract from".into()));
    }
    let params = DecodingParams::default();
    let outputs: Vec<Result<String>> = stream::iter(docs)
        .map(|doc| {
            let turns = vec![ChatTurn::user(render(template, &[("text", &doc.fused_text)]))];
            let params = &params;
            async move { complete_chat(chat, &turns, params).await }
        })
        .buffered(concurrency.max(1))
        .collect()
        .await;

    let mut graph = KnowledgeGraph::new();
    let mut report = ExtractionReport {
        documents: docs.len(),
        skipped: Vec::new(),
    };
    for (doc, output) in docs.iter().zip(outputs) {
        match parse_extraction(&output?, doc.image_ref.as_deref()) {
            Some(part) => graph.merge(part),
            None => {
                tracing::warn!(doc = %doc.id, "extraction output unparseable; document skipped");
                report.skipped.push(doc.id.clone());
            }
        }
    }
    graph.validate()?;
    Ok((graph, report))
}
