//! The set of backends one pipeline talks to, by role.

use std::sync::Arc;

use crate::gateway::{
    CallLog, Captioner, ChatModel, Embedder, HashingEmbedder, RecordingCaptioner, RecordingChat, RecordingEmbedder,
    ScriptedCaptioner,
};
use crate::retrieval::web::{RecordingSearch, StubSearch, WebSearch};

pub const ROLE_CHAT: &str = "chat";
pub const ROLE_LIGHTWEIGHT: &str = "lightweight_chat";
pub const ROLE_EXPERT: &str = "expert_chat";
pub const ROLE_EMBEDDING: &str = "embedding";
pub const ROLE_CAPTION: &str = "caption";

#[derive(Clone)]
pub struct Backends {
    /// Decomposition, extraction, keyword, and vector/web answer calls.
    pub chat: Arc<dyn ChatModel>,
    /// Graph answers, summaries, consensus merges, and the final refinement.
    pub lightweight_chat: Arc<dyn ChatModel>,
    /// Conflict resolution only.
    pub expert_chat: Arc<dyn ChatModel>,
    pub embedder: Arc<dyn Embedder>,
    pub captioner: Arc<dyn Captioner>,
    pub search: Arc<dyn WebSearch>,
}

impl Backends {
    /// One chat model in all three chat roles.
    pub fn with_single_chat(
        chat: Arc<dyn ChatModel>,
        embedder: Arc<dyn Embedder>,
        captioner: Arc<dyn Captioner>,
        search: Arc<dyn WebSearch>,
    ) -> Self {
        Self {
            chat: chat.clone(),
            lightweight_chat: chat.clone(),
            expert_chat: chat,
            embedder,
            captioner,
            search,
        }
    }

    /// Offline set: the given chat, a hashing embedder, no captions, and an
    /// empty search stub.
    pub fn offline(chat: Arc<dyn ChatModel>, dim: usize) -> Self {
        Self::with_single_chat(
            chat,
            Arc::new(HashingEmbedder::new(dim)),
            Arc::new(ScriptedCaptioner::new()),
            Arc::new(StubSearch::new()),
        )
    }

    /// Same backends, with every call appended to `log` under its role.
    pub fn recorded(&self, log: &CallLog) -> Self {
        Self {
            chat: Arc::new(RecordingChat::new(self.chat.clone(), ROLE_CHAT, log.clone())),
            lightweight_chat: Arc::new(RecordingChat::new(
                self.lightweight_chat.clone(),
                ROLE_LIGHTWEIGHT,
                log.clone(),
            )),
            expert_chat: Arc::new(RecordingChat::new(self.expert_chat.clone(), ROLE_EXPERT, log.clone())),
            embedder: Arc::new(RecordingEmbedder::new(self.embedder.clone(), ROLE_EMBEDDING, log.clone())),
            captioner: Arc::new(RecordingCaptioner::new(self.captioner.clone(), ROLE_CAPTION, log.clone())),
            search: Arc::new(RecordingSearch::new(self.search.clone(), log.clone())),
        }
    }
}
