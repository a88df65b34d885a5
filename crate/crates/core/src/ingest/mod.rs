//! Corpus ingestion: caption fusion, chunking, the embedding index, and the
//! knowledge graph.

mod chunk;
mod graph;
mod index;

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use futures::stream::{self, StreamExt, TryStreamExt};
use serde::{Deserialize, Serialize};

pub use chunk::{chunk_document, window_spans, Chunk, ChunkConfig};
pub use graph::{entity_key, extract_graph, parse_extraction, Entity, ExtractionReport, KnowledgeGraph, Triplet};
pub use index::{build_index, EmbeddingIndex, IndexRecord};

use crate::error::{HmragError, Result};
use crate::gateway::{caption_image, complete_chat, Captioner, ChatModel, ChatTurn, DecodingParams, Embedder};
use crate::prompts::{render, PromptSet};

/// Separator placed between document text and its image caption.
pub const FUSION_SEPARATOR: &str = "\n\n";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    #[serde(default)]
    pub text: String,
    #[serde(default)]
    pub image_ref: Option<String>,
}

impl CorpusRecord {
    pub fn validate(&self) -> Result<()> {
        if self.id.trim().is_empty() {
            return Err(HmragError::InvalidInput("corpus record has an empty id".into()));
        }
        let has_image = self.image_ref.as_deref().is_some_and(|r| !r.trim().is_empty());
        if self.text.trim().is_empty() && !has_image {
            return Err(HmragError::InvalidInput(format!(
                "corpus record {} has neither text nor image",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FusedDocument {
    pub id: String,
    pub fused_text: String,
    pub caption: Option<String>,
    pub image_ref: Option<String>,
}

/// Reads a JSON-lines corpus, rejecting invalid records and duplicate ids.
pub fn read_corpus(path: &Path) -> Result<Vec<CorpusRecord>> {
    let file = File::open(path).map_err(|e| HmragError::io(path, e))?;
    let mut records = Vec::new();
    let mut ids = HashSet::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| HmragError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record: CorpusRecord = serde_json::from_str(&line).map_err(|e| {
            HmragError::InvalidInput(format!("{}:{}: {e}", path.display(), lineno + 1))
        })?;
        record.validate()?;
        if !ids.insert(record.id.clone()) {
            return Err(HmragError::DuplicateId(record.id));
        }
        records.push(record);
    }
    Ok(records)
}

/// Captions the record's image (if any), refines the caption against the
/// record text with one chat call, and concatenates text and caption.
pub async fn caption_and_refine(
    record: &CorpusRecord,
    captioner: &dyn Captioner,
    chat: &dyn ChatModel,
    refine_template: &str,
) -> Result<FusedDocument> {
    record.validate()?;
    let image_ref = record
        .image_ref
        .as_deref()
        .map(str::trim)
        .filter(|r| !r.is_empty());
    let Some(image_ref) = image_ref else {
        return Ok(FusedDocument {
            id: record.id.clone(),
            fused_text: record.text.clone(),
            caption: None,
            image_ref: None,
        });
    };
    let raw = caption_image(captioner, image_ref).await?;
    let prompt = render(refine_template, &[("caption", raw.as_str()), ("text", record.text.as_str())]);
    let refined = complete_chat(chat, &[ChatTurn::user(prompt)], &DecodingParams::default()).await?;
    let caption = refined.trim().to_string();
    let fused_text = if record.text.trim().is_empty() {
        caption.clone()
    } else {
        format!("{}{FUSION_SEPARATOR}{}", record.text, caption)
    };
    if fused_text.trim().is_empty() {
        return Err(HmragError::BackendResponse(format!(
            "caption for {} is empty",
            record.id
        )));
    }
    Ok(FusedDocument {
        id: record.id.clone(),
        fused_text,
        caption: Some(caption),
        image_ref: Some(image_ref.to_string()),
    })
}

/// The two finished knowledge stores.
#[derive(Debug, Clone, PartialEq)]
pub struct Stores {
    pub index: EmbeddingIndex,
    pub graph: KnowledgeGraph,
}

impl Stores {
    pub const INDEX_FILE: &'static str = "index.jsonl";
    pub const GRAPH_FILE: &'static str = "graph.jsonl";

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| HmragError::io(dir, e))?;
        self.index.save(&dir.join(Self::INDEX_FILE))?;
        self.graph.save(&dir.join(Self::GRAPH_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(Self {
            index: EmbeddingIndex::load(&dir.join(Self::INDEX_FILE))?,
            graph: KnowledgeGraph::load(&dir.join(Self::GRAPH_FILE))?,
        })
    }

    pub fn paths(dir: &Path) -> (PathBuf, PathBuf) {
        (dir.join(Self::INDEX_FILE), dir.join(Self::GRAPH_FILE))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestConfig {
    pub chunk: ChunkConfig,
    /// Documents processed concurrently during captioning and extraction.
    pub concurrency: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            chunk: ChunkConfig::default(),
            concurrency: 4,
        }
    }
}

#[derive(Debug, Clone)]
pub struct IngestOutput {
    pub stores: Stores,
    pub documents: Vec<FusedDocument>,
    pub chunks: usize,
    pub extraction: ExtractionReport,
}

pub async fn ingest_corpus(
    records: &[CorpusRecord],
    chat: &dyn ChatModel,
    embedder: &dyn Embedder,
    captioner: &dyn Captioner,
    prompts: &PromptSet,
    cfg: &IngestConfig,
) -> Result<IngestOutput> {
    if records.is_empty() {
        return Err(HmragError::InvalidInput("corpus is empty".into()));
    }
    cfg.chunk.validate()?;
    let documents: Vec<FusedDocument> = stream::iter(records)
        .map(|r| caption_and_refine(r, captioner, chat, &prompts.caption_refine))
        .buffered(cfg.concurrency.max(1))
        .try_collect()
        .await?;

    let mut chunks = Vec::new();
    for doc in &documents {
        chunks.extend(chunk_document(doc, cfg.chunk)?);
    }
    let index = build_index(&chunks, embedder).await?;
    let (graph, extraction) = extract_graph(&documents, chat, &prompts.extract, cfg.concurrency).await?;
    Ok(IngestOutput {
        stores: Stores { index, graph },
        documents,
        chunks: chunks.len(),
        extraction,
    })
}
