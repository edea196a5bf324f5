//! Shared server state: the memory store, the interaction log and the set of
//! live sessions.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::Duration;

use memcue_core::clock::ceil_ms;
use memcue_core::config::ConfigError;
use memcue_core::session::{LogError, Services};
use memcue_core::{
    Clock, Config, InteractionLog, InteractionRecord, MemoryStore, Mode, Session, SessionConfig, SessionError,
    StoreError, WallClock,
};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::broadcast;

const STREAM_CAPACITY: usize = 256;

#[derive(Debug, Error)]
pub enum StateError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("memory store: {0}")]
    Store(#[from] StoreError),
    #[error("interaction log: {0}")]
    Log(#[from] LogError),
    #[error("store at {path} has dimension {store}, embedder produces {embedder}")]
    DimensionMismatch {
        path: PathBuf,
        store: usize,
        embedder: usize,
    },
}

/// Messages pushed to WebSocket subscribers of a session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum StreamEvent {
    Transcript {
        session_id: String,
        text: String,
        timestamp: u64,
        speaker: Option<String>,
        context: String,
        evicted: String,
        new_block_ids: Vec<String>,
    },
    TriggerStarted {
        session_id: String,
        trigger_id: Option<String>,
        mode: Mode,
    },
    Interaction {
        record: Box<InteractionRecord>,
    },
    SessionClosed {
        session_id: String,
        flushed_block_ids: Vec<String>,
    },
}

pub struct LiveSession {
    pub session: Session,
    pub events: broadcast::Sender<StreamEvent>,
    started: Duration,
}

impl LiveSession {
    pub fn publish(&self, event: StreamEvent) {
        // no subscribers is fine
        let _ = self.events.send(event);
    }
}

pub struct AppState {
    pub services: Services,
    pub session_config: SessionConfig,
    pub backend_label: String,
    store_path: Option<PathBuf>,
    sessions: Mutex<HashMap<String, Arc<LiveSession>>>,
    next_session: AtomicU64,
}

impl AppState {
    /// Builds state from configuration, loading the store and log files
    /// named in `[server]` when they exist.
    pub fn from_config(config: &Config) -> Result<Self, StateError> {
        let clock: Arc<dyn Clock> = Arc::new(WallClock::new());
        let embedder = config.embedder.build();
        let store = match &config.server.store_path {
            Some(path) if path.exists() => {
                let store = MemoryStore::load(path)?;
                if store.dimension() != embedder.dimension() {
                    return Err(StateError::DimensionMismatch {
                        path: path.clone(),
                        store: store.dimension(),
                        embedder: embedder.dimension(),
                    });
                }
                store
            }
            _ => MemoryStore::new(embedder.dimension()),
        };
        let log = match &config.server.log_path {
            Some(path) => InteractionLog::open(path)?,
            None => InteractionLog::in_memory(),
        };
        let backend = config.backend.build(clock.clone());
        let backend_label = backend.kind().to_string();
        Ok(Self::new(
            Services {
                store: store.shared(),
                embedder,
                backend,
                clock,
                log: Arc::new(log),
            },
            config.session,
            backend_label,
            config.server.store_path.clone(),
        ))
    }

    pub fn new(
        services: Services,
        session_config: SessionConfig,
        backend_label: impl Into<String>,
        store_path: Option<PathBuf>,
    ) -> Self {
        Self {
            services,
            session_config,
            backend_label: backend_label.into(),
            store_path,
            sessions: Mutex::new(HashMap::new()),
            next_session: AtomicU64::new(1),
        }
    }

    fn sessions(&self) -> MutexGuard<'_, HashMap<String, Arc<LiveSession>>> {
        self.sessions.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Opens a session. Returns `None` when `id` belongs to a live session or
    /// already owns blocks in the store.
    pub fn open_session(&self, id: Option<String>) -> Result<Option<Arc<LiveSession>>, SessionError> {
        let mut sessions = self.sessions();
        let id = match id {
            Some(id) => id,
            None => loop {
                let candidate = format!("s{}", self.next_session.fetch_add(1, Ordering::SeqCst));
                if !sessions.contains_key(&candidate) && !self.id_used_in_store(&candidate) {
                    break candidate;
                }
            },
        };
        if sessions.contains_key(&id) || self.id_used_in_store(&id) {
            return Ok(None);
        }
        let session = Session::new(id.clone(), self.session_config, self.services.clone())?;
        let (events, _) = broadcast::channel(STREAM_CAPACITY);
        let live = Arc::new(LiveSession {
            session,
            events,
            started: self.services.clock.now(),
        });
        sessions.insert(id, live.clone());
        Ok(Some(live))
    }

    // block ids are derived from the session id, so a fresh session must not
    // reuse the id of one whose blocks are already stored
    fn id_used_in_store(&self, id: &str) -> bool {
        let prefix = format!("{id}-");
        let store = self.services.store.read().unwrap_or_else(|e| e.into_inner());
        let used = store.ids().any(|b| b.starts_with(&prefix));
        used
    }

    pub fn session(&self, id: &str) -> Option<Arc<LiveSession>> {
        self.sessions().get(id).cloned()
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions().keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Closes and forgets a session, flushing its context into memory.
    pub fn close_session(&self, id: &str) -> Option<Result<Vec<String>, SessionError>> {
        let live = self.sessions().remove(id)?;
        let result = live.session.close();
        if let Ok(flushed) = &result {
            live.publish(StreamEvent::SessionClosed {
                session_id: id.to_string(),
                flushed_block_ids: flushed.clone(),
            });
        }
        Some(result)
    }

    /// Closes every session; used on shutdown.
    pub fn close_all(&self) {
        for id in self.session_ids() {
            if let Some(Err(e)) = self.close_session(&id) {
                tracing::warn!(session = %id, error = %e, "closing session failed");
            }
        }
    }

    /// Writes the store to its configured file, if any.
    pub fn persist_store(&self) -> Result<(), StoreError> {
        if let Some(path) = &self.store_path {
            self.services
                .store
                .read()
                .unwrap_or_else(|e| e.into_inner())
                .persist(path)?;
        }
        Ok(())
    }

    /// Default event timestamp: milliseconds since the session opened.
    pub fn session_elapsed_ms(&self, live: &LiveSession) -> u64 {
        ceil_ms(self.services.clock.now().saturating_sub(live.started))
    }
}
