use serde::{Deserialize, Serialize};

use super::FusedDocument;
use crate::error::{HmragError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub chunk_id: String,
    pub doc_id: String,
    pub text: String,
    /// Half-open whitespace-token range `[start, end)` within the document.
    pub token_span: (usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkConfig {
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for ChunkConfig {
    fn default() -> Self {
        Self {
            chunk_size: 512,
            overlap: 64,
        }
    }
}

impl ChunkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.chunk_size == 0 || self.overlap >= self.chunk_size {
            return Err(HmragError::InvalidInput(format!(
                "chunk overlap {} must be smaller than chunk size {}",
                self.overlap, self.chunk_size
            )));
        }
        Ok(())
    }
}

/// Window start/end pairs for `n` tokens.
pub fn window_spans(n: usize, cfg: ChunkConfig) -> Result<Vec<(usize, usize)>> {
    cfg.validate()?;
    let stride = cfg.chunk_size - cfg.overlap;
    let mut spans = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + cfg.chunk_size).min(n);
        spans.push((start, end));
        if end == n {
            break;
        }
        start += stride;
    }
    Ok(spans)
}

pub fn chunk_document(doc: &FusedDocument, cfg: ChunkConfig) -> Result<Vec<Chunk>> {
    let tokens: Vec<&str> = doc.fused_text.split_whitespace().collect();
    let spans = window_spans(tokens.len(), cfg)?;
    Ok(spans
        .into_iter()
        .enumerate()
        .map(|(i, (start, end))| Chunk {
            chunk_id: format!("{}#{:05}", doc.id, i),
            doc_id: doc.id.clone(),
            text: tokens[start..end].join(" "),
            token_span: (start, end),
        })
        .collect())
}
