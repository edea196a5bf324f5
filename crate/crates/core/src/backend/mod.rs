//! Text generation backends.

mod mock;
mod remote;

pub use mock::{ExtractiveMock, UNKNOWN_ANSWER};
pub use remote::{RemoteLlm, RemoteLlmConfig};

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_OUTPUT_TOKENS: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Remote,
    ExtractiveMock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Remote => "remote",
            BackendKind::ExtractiveMock => "extractive_mock",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BackendError {
    #[error("language model unavailable (retryable: {retryable}): {message}")]
    RemoteUnavailable { retryable: bool, message: String },
    #[error("prompt of ~{tokens} tokens exceeds the backend limit of {limit}")]
    PromptTooLarge { tokens: usize, limit: usize },
    #[error("prompt does not match any known template layout")]
    MalformedPrompt,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationRequest {
    pub prompt: String,
    pub temperature: f32,
    pub max_output_tokens: usize,
}

impl GenerationRequest {
    pub fn new(prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            temperature: 0.0,
            max_output_tokens: DEFAULT_MAX_OUTPUT_TOKENS,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.prompt.trim().is_empty() {
            return Err(BackendError::InvalidRequest("prompt is empty".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(BackendError::InvalidRequest("temperature must be non-negative".into()));
        }
        if self.max_output_tokens == 0 {
            return Err(BackendError::InvalidRequest(
                "max_output_tokens must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationResult {
    pub text: String,
    pub latency_ms: u64,
    pub backend_used: BackendKind,
}

pub trait LanguageBackend: Send + Sync {
    fn kind(&self) -> BackendKind;
    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError>;
}

impl<T: LanguageBackend + ?Sized> LanguageBackend for Arc<T> {
    fn kind(&self) -> BackendKind {
        (**self).kind()
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        (**self).generate(request)
    }
}
