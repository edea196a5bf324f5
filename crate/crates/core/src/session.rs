//! Live sessions: transcript ingestion into memory, triggers in the three
//! interaction modes, and the interaction log.

use std::collections::HashMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::LanguageBackend;
use crate::clock::{ceil_ms, Clock};
use crate::embedding::{EmbedError, Embedder};
use crate::ingest::{
    ChunkStager, ContextBuffer, IngestError, StagedBlock, TranscriptEvent, DEFAULT_CONTEXT_CHARS,
    DEFAULT_FLUSH_THRESHOLD_CHARS,
};
use crate::query_agent::queryless_answer;
use crate::retrieval::{answer_query, AgentError, AnswerTrace, CategoryHint, Pipeline};
use crate::store::{MemoryBlock, RetrievalConfig, SharedStore, StoreError};
use crate::text::char_len;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// Explicit query, raw full-length answer.
    Baseline,
    /// Explicit query, concise answer.
    Query,
    /// No query; inferred from context, concise answer.
    Queryless,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::Baseline, Mode::Query, Mode::Queryless];

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Query => "query",
            Mode::Queryless => "queryless",
        }
    }

    pub fn takes_query(self) -> bool {
        !matches!(self, Mode::Queryless)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "baseline" => Ok(Mode::Baseline),
            "query" => Ok(Mode::Query),
            "queryless" => Ok(Mode::Queryless),
            other => Err(format!(
                "unknown mode {other:?} (expected baseline, query or queryless)"
            )),
        }
    }
}

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("session is closed")]
    SessionClosed,
    #[error("mode {mode} {reason}")]
    ModeArgMismatch { mode: Mode, reason: &'static str },
    #[error("no open trigger {0:?}")]
    UnknownTrigger(String),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("interaction log: {0}")]
    Log(#[from] LogError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InteractionStatus {
    Ok,
    Failed,
}

/// One trigger and its outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionRecord {
    pub interaction_id: String,
    pub session_id: String,
    pub mode: Mode,
    pub voiced_query: Option<String>,
    pub inferred_query: Option<String>,
    pub context_snapshot: String,
    pub hit_ids: Vec<String>,
    /// Cosine similarity per hit, widened from `f32`.
    pub hit_similarities: Vec<f64>,
    pub raw_answer: String,
    pub concise_answer: String,
    /// Characters in the delivered answer.
    pub response_chars: usize,
    /// Trigger press to end of the voiced query. Never set for queryless.
    pub query_time_ms: Option<u64>,
    /// End of the query to answer availability.
    pub process_time_ms: u64,
    pub created_at: u64,
    pub status: InteractionStatus,
    pub category_hint: Option<CategoryHint>,
    pub error_class: Option<String>,
    pub error: Option<String>,
}

impl InteractionRecord {
    /// The answer shown to the user.
    pub fn delivered_answer(&self) -> &str {
        &self.concise_answer
    }
}

#[derive(Debug, Error)]
pub enum LogError {
    #[error("i/o failure: {0}")]
    Io(#[from] std::io::Error),
    #[error("corrupt record at line {line}: {reason}")]
    CorruptRecord { line: usize, reason: String },
}

/// Append-only interaction log, optionally mirrored to a JSONL file.
#[derive(Debug, Default)]
pub struct InteractionLog {
    path: Option<PathBuf>,
    inner: Mutex<LogInner>,
}

#[derive(Debug, Default)]
struct LogInner {
    records: Vec<InteractionRecord>,
    file: Option<File>,
}

impl InteractionLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Opens (or creates) a log file and loads the records already in it.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, LogError> {
        let path = path.as_ref().to_path_buf();
        let mut records = Vec::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let record = serde_json::from_str(&line).map_err(|e| LogError::CorruptRecord {
                    line: i + 1,
                    reason: e.to_string(),
                })?;
                records.push(record);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path: Some(path),
            inner: Mutex::new(LogInner {
                records,
                file: Some(file),
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    fn lock(&self) -> MutexGuard<'_, LogInner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Writes and flushes the record before making it visible.
    pub fn append(&self, record: InteractionRecord) -> Result<(), LogError> {
        let mut inner = self.lock();
        if let Some(file) = inner.file.as_mut() {
            let mut line = serde_json::to_string(&record).map_err(std::io::Error::other)?;
            line.push('\n');
            file.write_all(line.as_bytes())?;
            file.flush()?;
        }
        inner.records.push(record);
        Ok(())
    }

    /// Records in append order, optionally narrowed to one session or mode.
    pub fn list(&self, session_id: Option<&str>, mode: Option<Mode>) -> Vec<InteractionRecord> {
        self.lock()
            .records
            .iter()
            .filter(|r| session_id.is_none_or(|s| r.session_id == s))
            .filter(|r| mode.is_none_or(|m| r.mode == m))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.lock().records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionConfig {
    pub context_chars: usize,
    pub flush_threshold_chars: usize,
    pub retrieval: RetrievalConfig,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            context_chars: DEFAULT_CONTEXT_CHARS,
            flush_threshold_chars: DEFAULT_FLUSH_THRESHOLD_CHARS,
            retrieval: RetrievalConfig::default(),
        }
    }
}

/// Shared services a session runs against.
#[derive(Clone)]
pub struct Services {
    pub store: SharedStore,
    pub embedder: Arc<dyn Embedder>,
    pub backend: Arc<dyn LanguageBackend>,
    pub clock: Arc<dyn Clock>,
    pub log: Arc<InteractionLog>,
}

struct IngestState {
    buffer: ContextBuffer,
    stager: ChunkStager,
    last_timestamp: Option<u64>,
    next_block: u64,
    // blocks whose embedding failed; retried on the next flush
    retry: Vec<StagedBlock>,
}

struct OpenTrigger {
    mode: Mode,
    started: Duration,
    context: String,
}

/// What one ingest call changed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IngestOutcome {
    pub evicted: String,
    pub new_block_ids: Vec<String>,
    pub context: String,
}

pub struct Session {
    id: String,
    config: SessionConfig,
    services: Services,
    ingest: Mutex<IngestState>,
    triggers: Mutex<HashMap<String, OpenTrigger>>,
    closed: AtomicBool,
    next_trigger: AtomicU64,
    next_interaction: AtomicU64,
}

impl fmt::Debug for Session {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("config", &self.config)
            .field("closed", &self.is_closed())
            .finish()
    }
}

impl Session {
    pub fn new(id: impl Into<String>, config: SessionConfig, services: Services) -> Result<Self, SessionError> {
        let epoch = services.clock.wall_ms();
        Ok(Self {
            id: id.into(),
            ingest: Mutex::new(IngestState {
                buffer: ContextBuffer::with_epoch(config.context_chars, epoch)?,
                stager: ChunkStager::new(config.flush_threshold_chars)?,
                last_timestamp: None,
                next_block: 0,
                retry: Vec::new(),
            }),
            config,
            services,
            triggers: Mutex::new(HashMap::new()),
            closed: AtomicBool::new(false),
            next_trigger: AtomicU64::new(0),
            next_interaction: AtomicU64::new(0),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn config(&self) -> &SessionConfig {
        &self.config
    }

    pub fn is_closed(&self) -> bool {
        self.closed.load(Ordering::SeqCst)
    }

    fn state(&self) -> MutexGuard<'_, IngestState> {
        self.ingest.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn ensure_open(&self) -> Result<(), SessionError> {
        if self.is_closed() {
            Err(SessionError::SessionClosed)
        } else {
            Ok(())
        }
    }

    pub fn context(&self) -> String {
        self.state().buffer.snapshot()
    }

    pub fn pending(&self) -> String {
        self.state().stager.pending().to_string()
    }

    pub fn ingest(&self, event: TranscriptEvent) -> Result<IngestOutcome, SessionError> {
        let event = event.normalized()?;
        let mut state = self.state();
        self.ensure_open()?;
        if let Some(previous) = state.last_timestamp {
            if event.timestamp < previous {
                return Err(IngestError::TimestampRegression {
                    previous,
                    got: event.timestamp,
                }
                .into());
            }
        }
        state.last_timestamp = Some(event.timestamp);
        let st = &mut *state;
        let evicted = crate::ingest::append(&mut st.buffer, &mut st.stager, &event);
        let new_block_ids = self.commit(st, false)?;
        Ok(IngestOutcome {
            evicted,
            new_block_ids,
            context: state.buffer.snapshot(),
        })
    }

    fn commit(&self, state: &mut IngestState, force: bool) -> Result<Vec<String>, SessionError> {
        if let Some(block) = state.stager.flush(force) {
            state.retry.push(block);
        }
        let mut ids = Vec::new();
        while !state.retry.is_empty() {
            let block = &state.retry[0];
            let embedding = self.services.embedder.embed(&block.text)?;
            let id = format!("{}-{:06}", self.id, state.next_block);
            let memory = MemoryBlock {
                id: id.clone(),
                session_id: self.id.clone(),
                start_timestamp: block.timestamp,
                text: block.text.clone(),
                embedding,
            };
            self.services
                .store
                .write()
                .unwrap_or_else(|e| e.into_inner())
                .insert(memory)?;
            state.next_block += 1;
            state.retry.remove(0);
            ids.push(id);
        }
        Ok(ids)
    }

    /// Moves the whole context and any pending text into memory.
    pub fn flush_all(&self) -> Result<Vec<String>, SessionError> {
        let mut state = self.state();
        let st = &mut *state;
        if let Some(rest) = st.buffer.drain() {
            st.stager.stage(rest);
        }
        self.commit(st, true)
    }

    /// Flushes everything into memory and rejects further use.
    pub fn close(&self) -> Result<Vec<String>, SessionError> {
        let ids = self.flush_all()?;
        self.closed.store(true, Ordering::SeqCst);
        self.triggers.lock().unwrap_or_else(|e| e.into_inner()).clear();
        Ok(ids)
    }

    fn check_mode(mode: Mode, query: Option<&str>) -> Result<(), SessionError> {
        match (mode.takes_query(), query.is_some()) {
            (true, false) => Err(SessionError::ModeArgMismatch {
                mode,
                reason: "requires a voiced query",
            }),
            (false, true) => Err(SessionError::ModeArgMismatch {
                mode,
                reason: "does not accept a voiced query",
            }),
            _ => Ok(()),
        }
    }

    /// Single-shot trigger. `query_time_ms` is the caller-measured time the
    /// query took to voice, if known.
    pub fn trigger(
        &self,
        mode: Mode,
        voiced_query: Option<&str>,
        query_time_ms: Option<u64>,
    ) -> Result<InteractionRecord, SessionError> {
        self.ensure_open()?;
        Self::check_mode(mode, voiced_query)?;
        let context = self.context();
        let query_time_ms = if mode.takes_query() { query_time_ms } else { None };
        self.run(mode, voiced_query, context, query_time_ms)
    }

    /// Starts a hold-to-talk trigger and captures the context at press time.
    pub fn start_trigger(&self, mode: Mode) -> Result<String, SessionError> {
        self.ensure_open()?;
        if !mode.takes_query() {
            return Err(SessionError::ModeArgMismatch {
                mode,
                reason: "is a single press and cannot be held",
            });
        }
        let id = format!("{}-t{}", self.id, self.next_trigger.fetch_add(1, Ordering::SeqCst));
        let open = OpenTrigger {
            mode,
            started: self.services.clock.now(),
            context: self.context(),
        };
        self.triggers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .insert(id.clone(), open);
        Ok(id)
    }

    /// Releases a held trigger with the query voiced during the hold.
    pub fn end_trigger(&self, trigger_id: &str, voiced_query: &str) -> Result<InteractionRecord, SessionError> {
        self.ensure_open()?;
        let open = self
            .triggers
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .remove(trigger_id)
            .ok_or_else(|| SessionError::UnknownTrigger(trigger_id.to_string()))?;
        let query_time = ceil_ms(self.services.clock.now().saturating_sub(open.started));
        self.run(open.mode, Some(voiced_query), open.context, Some(query_time))
    }

    fn run(
        &self,
        mode: Mode,
        voiced_query: Option<&str>,
        context: String,
        query_time_ms: Option<u64>,
    ) -> Result<InteractionRecord, SessionError> {
        let pipeline = Pipeline {
            memory: &*self.services.store,
            embedder: &*self.services.embedder,
            backend: &*self.services.backend,
            retrieval: self.config.retrieval,
        };
        let clock = &self.services.clock;
        let started = clock.now();
        let outcome: Result<(Option<String>, AnswerTrace), AgentError> = match mode {
            Mode::Baseline => {
                answer_query(voiced_query.unwrap_or_default(), &context, &pipeline, false).map(|t| (None, t))
            }
            Mode::Query => answer_query(voiced_query.unwrap_or_default(), &context, &pipeline, true).map(|t| (None, t)),
            Mode::Queryless => queryless_answer(&context, &pipeline).map(|(q, t)| (Some(q.text), t)),
        };
        let process_time_ms = ceil_ms(clock.now().saturating_sub(started)).max(1);
        let seq = self.next_interaction.fetch_add(1, Ordering::SeqCst);
        let mut record = InteractionRecord {
            interaction_id: format!("{}-i{:06}", self.id, seq),
            session_id: self.id.clone(),
            mode,
            voiced_query: voiced_query.map(str::to_string),
            inferred_query: None,
            context_snapshot: context,
            hit_ids: Vec::new(),
            hit_similarities: Vec::new(),
            raw_answer: String::new(),
            concise_answer: String::new(),
            response_chars: 0,
            query_time_ms,
            process_time_ms,
            created_at: clock.wall_ms(),
            status: InteractionStatus::Ok,
            category_hint: None,
            error_class: None,
            error: None,
        };
        match outcome {
            Ok((inferred, trace)) => {
                record.inferred_query = inferred;
                record.hit_ids = trace.hit_ids();
                record.hit_similarities = trace.hits.iter().map(|h| h.similarity as f64).collect();
                record.response_chars = char_len(&trace.concise_answer);
                record.raw_answer = trace.raw_answer;
                record.concise_answer = trace.concise_answer;
                record.category_hint = Some(trace.category_hint);
            }
            Err(e) => {
                record.status = InteractionStatus::Failed;
                record.error_class = Some(e.class().to_string());
                record.error = Some(e.to_string());
            }
        }
        self.services.log.append(record.clone())?;
        Ok(record)
    }

    pub fn list_interactions(&self, mode: Option<Mode>) -> Vec<InteractionRecord> {
        self.services.log.list(Some(&self.id), mode)
    }
}
