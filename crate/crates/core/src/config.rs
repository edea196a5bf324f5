//! TOML configuration.
//!
//! ```toml
//! [session]
//! context_chars = 75
//! flush_threshold_chars = 300
//!
//! [session.retrieval]
//! k = 10
//! token_budget = 4096
//! tokenizer = "chars_div_4"
//!
//! [embedder]
//! dimension = 384
//! normalize = true
//! backend = { kind = "deterministic_local" }
//!
//! [backend]
//! kind = "mock"        # or "remote", with the remote client fields
//! latency_ms = 0
//! ```
//!
//! Every section and field is optional. Credentials are never read from
//! the file; remote sections name the environment variable instead.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{ExtractiveMock, LanguageBackend, RemoteLlm, RemoteLlmConfig};
use crate::clock::Clock;
use crate::embedding::{EmbedderBackend, EmbedderSpec};
use crate::session::SessionConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendConfig {
    Mock {
        #[serde(default)]
        latency_ms: u64,
    },
    Remote(RemoteLlmConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Mock { latency_ms: 0 }
    }
}

impl BackendConfig {
    pub fn build(&self, clock: Arc<dyn Clock>) -> Arc<dyn LanguageBackend> {
        match self {
            BackendConfig::Mock { latency_ms } => {
                Arc::new(ExtractiveMock::new().with_latency(Duration::from_millis(*latency_ms), clock))
            }
            BackendConfig::Remote(cfg) => Arc::new(RemoteLlm::new(cfg.clone())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Memory store file, loaded at startup and written on shutdown and
    /// session close.
    pub store_path: Option<PathBuf>,
    /// Interaction log file (JSONL).
    pub log_path: Option<PathBuf>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            store_path: None,
            log_path: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct Config {
    pub session: SessionConfig,
    pub embedder: EmbedderSpec,
    pub backend: BackendConfig,
    pub server: ServerConfig,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: Config = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let raw = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&raw)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let s = &self.session;
        if s.context_chars == 0 {
            return Err(ConfigError::Invalid("session.context_chars must be positive".into()));
        }
        if s.flush_threshold_chars == 0 {
            return Err(ConfigError::Invalid(
                "session.flush_threshold_chars must be positive".into(),
            ));
        }
        s.retrieval
            .validate()
            .map_err(|e| ConfigError::Invalid(format!("session.retrieval: {e}")))?;
        if self.embedder.dimension == 0 {
            return Err(ConfigError::Invalid("embedder.dimension must be positive".into()));
        }
        if let EmbedderBackend::Remote(r) = &self.embedder.backend {
            if r.endpoint.trim().is_empty() {
                return Err(ConfigError::Invalid("embedder.backend.endpoint is empty".into()));
            }
        }
        if let BackendConfig::Remote(r) = &self.backend {
            if r.endpoint.trim().is_empty() {
                return Err(ConfigError::Invalid("backend.endpoint is empty".into()));
            }
            if r.max_in_flight == 0 {
                return Err(ConfigError::Invalid("backend.max_in_flight must be positive".into()));
            }
        }
        Ok(())
    }
}
