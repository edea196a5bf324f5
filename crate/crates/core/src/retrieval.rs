//! Contextual-query answering: embed the query together with the current
//! context, fetch and assemble the closest memories, generate an answer and
//! optionally run the conciseness pass over it.

use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, GenerationRequest, LanguageBackend};
use crate::embedding::{EmbedError, Embedder, EmbeddingVector};
use crate::prompt::{bindings, Placeholder, PromptError, PromptTemplate};
use crate::store::{assemble, MemoryStore, RankedHit, RetrievalConfig, StoreError};
use crate::text::{char_len, normalize_for_match, normalize_whitespace};

/// Version of the don't-know pattern set used by [`is_dont_know`].
pub const DONT_KNOW_PATTERNS_VERSION: u32 = 1;
const DONT_KNOW_PREFIXES: &[&str] = &["i do not know", "i don t know", "i dont know", "unknown"];

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("context is empty")]
    EmptyContext,
    #[error("backend produced no usable query")]
    EmptyInference,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

impl AgentError {
    /// Stable snake_case name recorded on failed interactions.
    pub fn class(&self) -> &'static str {
        match self {
            AgentError::EmptyQuery => "empty_query",
            AgentError::EmptyContext => "empty_context",
            AgentError::EmptyInference => "empty_inference",
            AgentError::Embed(EmbedError::RemoteUnavailable { .. }) => "embedder_unavailable",
            AgentError::Embed(_) => "embedding",
            AgentError::Store(_) => "store",
            AgentError::Backend(BackendError::RemoteUnavailable { .. }) => "backend_unavailable",
            AgentError::Backend(BackendError::PromptTooLarge { .. }) => "prompt_too_large",
            AgentError::Backend(_) => "backend",
            AgentError::Prompt(_) => "prompt",
        }
    }
}

/// Anything that can answer a top-k similarity query.
pub trait MemorySource: Send + Sync {
    fn top_k(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<RankedHit>, StoreError>;
}

impl MemorySource for MemoryStore {
    fn top_k(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<RankedHit>, StoreError> {
        self.search(query, cfg)
    }
}

/// Holds the read lock only for the duration of the search itself.
impl MemorySource for RwLock<MemoryStore> {
    fn top_k(&self, query: &EmbeddingVector, cfg: &RetrievalConfig) -> Result<Vec<RankedHit>, StoreError> {
        self.read().unwrap_or_else(|e| e.into_inner()).search(query, cfg)
    }
}

/// Components one pipeline run needs.
#[derive(Clone, Copy)]
pub struct Pipeline<'a> {
    pub memory: &'a dyn MemorySource,
    pub embedder: &'a dyn Embedder,
    pub backend: &'a dyn LanguageBackend,
    pub retrieval: RetrievalConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CategoryHint {
    Answered,
    DontKnow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceHit {
    pub block_id: String,
    pub similarity: f32,
    pub start_timestamp: u64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerTrace {
    pub query: String,
    /// True when `query` came from query inference rather than the user.
    pub inferred: bool,
    pub context_snapshot: String,
    pub hits: Vec<TraceHit>,
    pub assembled_memories: String,
    pub prompt: String,
    pub raw_answer: String,
    pub concise_answer: String,
    pub category_hint: CategoryHint,
    /// Sum of backend-reported latencies for every generation in the run.
    pub backend_latency_ms: u64,
}

impl AnswerTrace {
    pub fn hit_ids(&self) -> Vec<String> {
        self.hits.iter().map(|h| h.block_id.clone()).collect()
    }
}

pub fn is_dont_know(answer: &str) -> bool {
    let norm = normalize_for_match(answer);
    DONT_KNOW_PREFIXES.iter().any(|p| norm.starts_with(p))
}

/// Text handed to the embedder: the query, then the context, separated by a
/// single space.
pub fn embedding_input(query: &str, context: &str) -> String {
    let query = normalize_whitespace(query);
    let context = normalize_whitespace(context);
    if context.is_empty() {
        query
    } else {
        format!("{query} {context}")
    }
}

pub fn answer_query(
    query: &str,
    context: &str,
    pipeline: &Pipeline<'_>,
    concise: bool,
) -> Result<AnswerTrace, AgentError> {
    let query = normalize_whitespace(query);
    if query.is_empty() {
        return Err(AgentError::EmptyQuery);
    }
    let context = normalize_whitespace(context);

    let vector = pipeline.embedder.embed(&embedding_input(&query, &context))?;
    let hits = pipeline.memory.top_k(&vector, &pipeline.retrieval)?;
    let assembly = assemble(&hits, &pipeline.retrieval);

    let prompt = PromptTemplate::CONTEXTUAL_QUERY.build(&bindings([
        (Placeholder::ExternalMemories, &assembly.text),
        (Placeholder::CurrentContext, &context),
        (Placeholder::Query, &query),
    ]))?;
    let generated = pipeline.backend.generate(&GenerationRequest::new(prompt.clone()))?;
    let raw_answer = generated.text.trim().to_string();
    let mut latency = generated.latency_ms;

    let concise_answer = if concise && !raw_answer.is_empty() {
        let (text, ms) = compress_with_latency(&query, &context, &raw_answer, pipeline.backend)?;
        latency += ms;
        text
    } else {
        raw_answer.clone()
    };

    Ok(AnswerTrace {
        category_hint: if is_dont_know(&raw_answer) {
            CategoryHint::DontKnow
        } else {
            CategoryHint::Answered
        },
        query,
        inferred: false,
        context_snapshot: context,
        hits: hits
            .iter()
            .map(|h| TraceHit {
                block_id: h.block_id.clone(),
                similarity: h.similarity,
                start_timestamp: h.block.start_timestamp,
                text: h.block.text.clone(),
            })
            .collect(),
        assembled_memories: assembly.text,
        prompt,
        raw_answer,
        concise_answer,
        backend_latency_ms: latency,
    })
}

/// Runs the conciseness pass. Falls back to `raw_answer` when the backend
/// returns nothing or something longer.
pub fn compress_answer(
    query: &str,
    context: &str,
    raw_answer: &str,
    backend: &dyn LanguageBackend,
) -> Result<String, AgentError> {
    compress_with_latency(query, context, raw_answer, backend).map(|(text, _)| text)
}

fn compress_with_latency(
    query: &str,
    context: &str,
    raw_answer: &str,
    backend: &dyn LanguageBackend,
) -> Result<(String, u64), AgentError> {
    let prompt = PromptTemplate::CONCISE_SUGGESTION.build(&bindings([
        (Placeholder::CurrentContext, context),
        (Placeholder::Query, query),
        (Placeholder::RetrievedAnswer, raw_answer),
    ]))?;
    let out = backend.generate(&GenerationRequest::new(prompt))?;
    let text = out.text.trim();
    let result = if text.is_empty() || char_len(text) > char_len(raw_answer) {
        raw_answer.to_string()
    } else {
        text.to_string()
    };
    Ok((result, out.latency_ms))
}
