use std::sync::{Arc, Mutex};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{turns_key, Captioner, ChatModel, ChatTurn, DecodingParams, Embedder};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CallKind {
    Chat,
    Embedding,
    Caption,
    Search,
}

/// One backend call as seen by the trace.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CallRecord {
    pub role: String,
    pub kind: CallKind,
    /// Hex digest of the request payload.
    pub key: String,
    pub ok: bool,
}

/// Shared append-only log of backend calls.
#[derive(Debug, Clone, Default)]
pub struct CallLog(Arc<Mutex<Vec<CallRecord>>>);

impl CallLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, record: CallRecord) {
        self.0.lock().expect("call log poisoned").push(record);
    }

    pub fn record(&self, role: &str, kind: CallKind, key: String, ok: bool) {
        self.push(CallRecord {
            role: role.to_string(),
            kind,
            key,
            ok,
        });
    }

    pub fn snapshot(&self) -> Vec<CallRecord> {
        self.0.lock().expect("call log poisoned").clone()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("call log poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn text_key(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub struct RecordingChat {
    inner: Arc<dyn ChatModel>,
    role: String,
    log: CallLog,
}

impl RecordingChat {
    pub fn new(inner: Arc<dyn ChatModel>, role: impl Into<String>, log: CallLog) -> Self {
        Self {
            inner,
            role: role.into(),
            log,
        }
    }
}

#[async_trait]
impl ChatModel for RecordingChat {
    async fn complete(&self, turns: &[ChatTurn], params: &DecodingParams) -> Result<String> {
        let out = self.inner.complete(turns, params).await;
        self.log
            .record(&self.role, CallKind::Chat, turns_key(turns), out.is_ok());
        out
    }
}

pub struct RecordingEmbedder {
    inner: Arc<dyn Embedder>,
    role: String,
    log: CallLog,
}

impl RecordingEmbedder {
    pub fn new(inner: Arc<dyn Embedder>, role: impl Into<String>, log: CallLog) -> Self {
        Self {
            inner,
            role: role.into(),
            log,
        }
    }
}

#[async_trait]
impl Embedder for RecordingEmbedder {
    async fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let out = self.inner.embed(text).await;
        self.log
            .record(&self.role, CallKind::Embedding, text_key(text), out.is_ok());
        out
    }
}

pub struct RecordingCaptioner {
    inner: Arc<dyn Captioner>,
    role: String,
    log: CallLog,
}

impl RecordingCaptioner {
    pub fn new(inner: Arc<dyn Captioner>, role: impl Into<String>, log: CallLog) -> Self {
        Self {
            inner,
            role: role.into(),
            log,
        }
    }
}

#[async_trait]
impl Captioner for RecordingCaptioner {
    async fn caption(&self, image_ref: &str) -> Result<String> {
        let out = self.inner.caption(image_ref).await;
        self.log
            .record(&self.role, CallKind::Caption, text_key(image_ref), out.is_ok());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{HashingEmbedder, ScriptedChat};

    #[tokio::test]
    async fn records_every_call_with_role() {
        let log = CallLog::new();
        let chat = RecordingChat::new(
            Arc::new(ScriptedChat::new().with_rule("ok", |_| Some("fine".into()))),
            "expert_chat",
            log.clone(),
        );
        let emb = RecordingEmbedder::new(Arc::new(HashingEmbedder::new(4)), "embedding", log.clone());
        chat.complete(&[ChatTurn::user("a")], &DecodingParams::default())
            .await
            .unwrap();
        emb.embed("b").await.unwrap();
        let calls = log.snapshot();
        assert_eq!(calls.len(), 2);
        assert_eq!(calls[0].role, "expert_chat");
        assert_eq!(calls[0].kind, CallKind::Chat);
        assert_eq!(calls[1].kind, CallKind::Embedding);
        assert!(calls.iter().all(|c| c.ok));
    }
}
