//! Conversational memory engine.
//!
//! Transcript text flows into a bounded [`ingest::ContextBuffer`]; text that
//! falls out of it is grouped into blocks, embedded and stored in a
//! [`store::MemoryStore`]. On a trigger, the current context and the user's
//! query (or a query inferred from the context) retrieve the closest blocks,
//! which are handed to a [`backend::LanguageBackend`] to produce a short
//! answer.

pub mod backend;
pub mod clock;
pub mod config;
pub mod embedding;
pub mod eval;
mod http;
pub mod ingest;
pub mod prompt;
pub mod query_agent;
pub mod retrieval;
pub mod session;
pub mod store;
pub mod text;

pub use backend::{BackendError, BackendKind, ExtractiveMock, GenerationRequest, GenerationResult, LanguageBackend};
pub use clock::{Clock, SimulatedClock, WallClock};
pub use config::Config;
pub use embedding::{cosine, EmbedError, Embedder, EmbedderSpec, EmbeddingVector, HashedEmbedder};
pub use eval::{label_response, load_corpus, replay, Category, Corpus, CorpusCase, MetricsReport};
pub use ingest::{ChunkStager, ContextBuffer, TranscriptEvent};
pub use prompt::{PromptTemplate, TemplateName};
pub use query_agent::{infer_query, queryless_answer, InferredQuery};
pub use retrieval::{answer_query, compress_answer, AgentError, AnswerTrace, CategoryHint, Pipeline};
pub use session::{InteractionLog, InteractionRecord, Mode, Session, SessionConfig, SessionError};
pub use store::{assemble_relevant, MemoryBlock, MemoryStore, RankedHit, RetrievalConfig, StoreError};
