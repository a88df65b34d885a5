use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::Chunk;
use crate::error::{HmragError, Result};
use crate::gateway::{embed_text, Embedder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexRecord {
    pub chunk_id: String,
    pub vector: Vec<f64>,
    pub text: String,
    pub doc_id: String,
    pub token_span: (usize, usize),
}

impl IndexRecord {
    pub fn chunk(&self) -> Chunk {
        Chunk {
            chunk_id: self.chunk_id.clone(),
            doc_id: self.doc_id.clone(),
            text: self.text.clone(),
            token_span: self.token_span,
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct IndexHeader {
    dim: usize,
    count: usize,
}

/// Immutable list of chunk embeddings searched exhaustively.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    dim: usize,
    records: Vec<IndexRecord>,
}

impl EmbeddingIndex {
    pub fn new(dim: usize, records: Vec<IndexRecord>) -> Result<Self> {
        if dim == 0 {
            return Err(HmragError::InvalidInput("index dimension must be positive".into()));
        }
        let mut seen = HashSet::new();
        for r in &records {
            if r.vector.len() != dim {
                return Err(HmragError::DimensionMismatch {
                    expected: dim,
                    actual: r.vector.len(),
                });
            }
            if !seen.insert(r.chunk_id.as_str()) {
                return Err(HmragError::DuplicateId(r.chunk_id.clone()));
            }
        }
        Ok(Self { dim, records })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn records(&self) -> &[IndexRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| HmragError::io(path, e))?;
        let mut w = BufWriter::new(file);
        let header = IndexHeader {
            dim: self.dim,
            count: self.records.len(),
        };
        let mut write_line = |line: String| -> Result<()> {
            writeln!(w, "{line}").map_err(|e| HmragError::io(path, e))
        };
        write_line(serde_json::to_string(&header)?)?;
        for r in &self.records {
            write_line(serde_json::to_string(r)?)?;
        }
        w.flush().map_err(|e| HmragError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| HmragError::io(path, e))?;
        let mut lines = BufReader::new(file).lines();
        let header_line = lines
            .next()
            .ok_or_else(|| HmragError::InvalidInput(format!("{} is empty", path.display())))?
            .map_err(|e| HmragError::io(path, e))?;
        let header: IndexHeader = serde_json::from_str(&header_line)?;
        let mut records = Vec::with_capacity(header.count);
        for line in lines {
            let line = line.map_err(|e| HmragError::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            records.push(serde_json::from_str::<IndexRecord>(&line)?);
        }
        if records.len() != header.count {
            return Err(HmragError::Invariant(format!(
                "index header declares {} records, found {}",
                header.count,
                records.len()
            )));
        }
        Self::new(header.dim, records)
    }
}

/// Embeds every chunk, in order. The first embedding fixes the dimension.
pub async fn build_index(chunks: &[Chunk], embedder: &dyn Embedder) -> Result<EmbeddingIndex> {
    if chunks.is_empty() {
        return Err(HmragError::InvalidInput("cannot build an index from zero chunks".into()));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = chunks.iter().find(|c| !seen.insert(c.chunk_id.as_str())) {
        return Err(HmragError::DuplicateId(dup.chunk_id.clone()));
    }
    let mut dim = None;
    let mut records = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let vector = embed_text(embedder, &chunk.text).await?;
        let expected = *dim.get_or_insert(vector.len());
        if vector.len() != expected {
            return Err(HmragError::DimensionMismatch {
                expected,
                actual: vector.len(),
            });
        }
        records.push(IndexRecord {
            chunk_id: chunk.chunk_id.clone(),
            vector,
            text: chunk.text.clone(),
            doc_id: chunk.doc_id.clone(),
            token_span: chunk.token_span,
        });
    }
    EmbeddingIndex::new(dim.unwrap_or_default(), records)
}
