//! HTTP client for a hosted completion model.
//!
//! Speaks the OpenAI chat-completions schema:
//!
//! ```text
//! POST {endpoint}
//! {"model": "...", "messages": [{"role": "user", "content": PROMPT}],
//!  "temperature": 0.0, "max_tokens": 256}
//! ```
//!
//! and accepts either `choices[0].message.content` (chat) or
//! `choices[0].text` (legacy completions) in the response.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BackendError, BackendKind, GenerationRequest, GenerationResult, LanguageBackend};
use crate::clock::ceil_ms;
use crate::http::JsonClient;
use crate::store::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteLlmConfig {
    pub endpoint: String,
    #[serde(default = "default_model")]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_prompt_limit")]
    pub max_prompt_tokens: usize,
}

fn default_model() -> String {
    "gpt-4o-mini".into()
}
fn default_key_env() -> String {
    "MEMCUE_LLM_API_KEY".into()
}
fn default_timeout_ms() -> u64 {
    30_000
}
fn default_in_flight() -> usize {
    4
}
fn default_prompt_limit() -> usize {
    16_384
}

impl RemoteLlmConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            model: default_model(),
            api_key_env: default_key_env(),
            timeout_ms: default_timeout_ms(),
            max_in_flight: default_in_flight(),
            max_prompt_tokens: default_prompt_limit(),
        }
    }
}

pub struct RemoteLlm {
    config: RemoteLlmConfig,
    client: JsonClient,
}

#[derive(Serialize)]
struct ChatMessage<'a> {
    role: &'a str,
    content: &'a str,
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: [ChatMessage<'a>; 1],
    temperature: f32,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    #[serde(default)]
    message: Option<ChoiceMessage>,
    #[serde(default)]
    text: Option<String>,
}

#[derive(Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

impl RemoteLlm {
    pub fn new(config: RemoteLlmConfig) -> Self {
        let client = JsonClient::new(Duration::from_millis(config.timeout_ms), config.max_in_flight);
        Self { config, client }
    }
}

impl LanguageBackend for RemoteLlm {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    fn generate(&self, request: &GenerationRequest) -> Result<GenerationResult, BackendError> {
        request.validate()?;
        let tokens = Tokenizer::CharsDiv4.count(&request.prompt);
        if tokens > self.config.max_prompt_tokens {
            return Err(BackendError::PromptTooLarge {
                tokens,
                limit: self.config.max_prompt_tokens,
            });
        }
        let key = std::env::var(&self.config.api_key_env).ok();
        let body = ChatRequest {
            model: &self.config.model,
            messages: [ChatMessage {
                role: "user",
                content: &request.prompt,
            }],
            temperature: request.temperature,
            max_tokens: request.max_output_tokens,
        };
        let started = Instant::now();
        let response: ChatResponse = self
            .client
            .post(&self.config.endpoint, key.as_deref(), &body)
            .map_err(|f| BackendError::RemoteUnavailable {
                retryable: f.retryable,
                message: f.message,
            })?;
        let latency_ms = ceil_ms(started.elapsed());
        let text = response
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.and_then(|m| m.content).or(c.text))
            .ok_or_else(|| BackendError::RemoteUnavailable {
                retryable: false,
                message: "response contained no completion".into(),
            })?;
        Ok(GenerationResult {
            text: text.trim().to_string(),
            latency_ms,
            backend_used: BackendKind::Remote,
        })
    }
}
