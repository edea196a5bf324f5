//! Text embeddings and cosine similarity.
//!
//! Two backends sit behind the [`Embedder`] trait:
//!
//! - [`HashedEmbedder`]: deterministic signed-hash bag of words. Tokens are
//!   lowercased with punctuation stripped, each token is hashed (FNV-1a with a
//!   fixed seed) into one of `dimension` buckets with a hash-derived sign, and
//!   the result is L2-normalized. Stable across processes and platforms.
//! - [`RemoteEmbedder`]: HTTP client for an embeddings service.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::http::JsonClient;
use crate::text::{normalize_whitespace, word_tokens};

pub const DEFAULT_DIMENSION: usize = 384;
const HASH_SEED: u64 = 0x6d65_6d63_7565_0001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EmbedError {
    #[error("cannot embed empty text")]
    EmptyText,
    #[error("embedding service unavailable (retryable: {retryable}): {message}")]
    RemoteUnavailable { retryable: bool, message: String },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("zero vector has no direction")]
    ZeroVector,
    #[error("embedding contains non-finite values")]
    NonFinite,
}

/// Dense embedding vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EmbeddingVector(Vec<f32>);

impl EmbeddingVector {
    pub fn new(values: Vec<f32>) -> Result<Self, EmbedError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(EmbedError::NonFinite);
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f32] {
        &self.0
    }

    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn l2_norm(&self) -> f64 {
        self.0.iter().map(|v| (*v as f64) * (*v as f64)).sum::<f64>().sqrt()
    }

    /// Scales to unit length.
    pub fn normalized(&self) -> Result<Self, EmbedError> {
        let norm = self.l2_norm();
        if norm == 0.0 {
            return Err(EmbedError::ZeroVector);
        }
        Ok(Self(self.0.iter().map(|v| (*v as f64 / norm) as f32).collect()))
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }
}

impl AsRef<[f32]> for EmbeddingVector {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

/// Cosine similarity, clamped to [-1, 1].
pub fn cosine(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f32, EmbedError> {
    cosine_slices(a.values(), b.values())
}

pub fn cosine_slices(a: &[f32], b: &[f32]) -> Result<f32, EmbedError> {
    if a.len() != b.len() {
        return Err(EmbedError::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut dot = 0.0f64;
    let mut na = 0.0f64;
    let mut nb = 0.0f64;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (*x as f64, *y as f64);
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(EmbedError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0) as f32)
}

pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderBackend {
    DeterministicLocal,
    Remote(RemoteEmbedderConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemoteEmbedderConfig {
    pub endpoint: String,
    #[serde(default = "default_embed_model")]
    pub model: String,
    /// Environment variable holding the bearer token.
    #[serde(default = "default_embed_key_env")]
    pub api_key_env: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
}

fn default_embed_model() -> String {
    "all-MiniLM-L6-v2".into()
}
fn default_embed_key_env() -> String {
    "MEMCUE_EMBED_API_KEY".into()
}
fn default_timeout_ms() -> u64 {
    10_000
}
fn default_in_flight() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmbedderSpec {
    pub dimension: usize,
    pub backend: EmbedderBackend,
    pub normalize: bool,
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        Self {
            dimension: DEFAULT_DIMENSION,
            backend: EmbedderBackend::DeterministicLocal,
            normalize: true,
        }
    }
}

impl EmbedderSpec {
    pub fn build(&self) -> Arc<dyn Embedder> {
        match &self.backend {
            EmbedderBackend::DeterministicLocal => Arc::new(HashedEmbedder::new(self.dimension, self.normalize)),
            EmbedderBackend::Remote(cfg) => Arc::new(RemoteEmbedder::new(cfg.clone(), self.dimension, self.normalize)),
        }
    }
}

/// Deterministic signed-hash bag-of-words embedder.
#[derive(Debug, Clone)]
pub struct HashedEmbedder {
    dimension: usize,
    normalize: bool,
}

impl HashedEmbedder {
    pub fn new(dimension: usize, normalize: bool) -> Self {
        assert!(dimension > 0, "embedding dimension must be positive");
        Self { dimension, normalize }
    }
}

impl Default for HashedEmbedder {
    fn default() -> Self {
        Self::new(DEFAULT_DIMENSION, true)
    }
}

fn fnv1a(seed: u64, bytes: &[u8]) -> u64 {
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    let mut hash = 0xcbf2_9ce4_8422_2325u64 ^ seed;
    for b in bytes {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    // final avalanche so that the low bits used for the bucket mix well
    hash ^= hash >> 33;
    hash = hash.wrapping_mul(0xff51_afd7_ed55_8ccd);
    hash ^= hash >> 33;
    hash
}

impl Embedder for HashedEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let tokens = word_tokens(text);
        if tokens.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let mut acc = vec![0.0f64; self.dimension];
        for token in &tokens {
            let h = fnv1a(HASH_SEED, token.as_bytes());
            let bucket = (h % self.dimension as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            acc[bucket] += sign;
        }
        if self.normalize {
            let norm = acc.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(EmbedError::ZeroVector);
            }
            acc.iter_mut().for_each(|v| *v /= norm);
        }
        EmbeddingVector::new(acc.into_iter().map(|v| v as f32).collect())
    }
}

/// Client for an OpenAI-compatible embeddings endpoint.
///
/// Request: `{"model": ..., "input": text}`. Accepted responses:
/// `{"data": [{"embedding": [..]}]}` or `{"embedding": [..]}`.
pub struct RemoteEmbedder {
    config: RemoteEmbedderConfig,
    dimension: usize,
    normalize: bool,
    client: JsonClient,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    model: &'a str,
    input: &'a str,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum EmbedResponse {
    OpenAi { data: Vec<EmbedDatum> },
    Bare { embedding: Vec<f32> },
}

#[derive(Deserialize)]
struct EmbedDatum {
    embedding: Vec<f32>,
}

impl RemoteEmbedder {
    pub fn new(config: RemoteEmbedderConfig, dimension: usize, normalize: bool) -> Self {
        let client = JsonClient::new(Duration::from_millis(config.timeout_ms), config.max_in_flight);
        Self {
            config,
            dimension,
            normalize,
            client,
        }
    }
}

impl Embedder for RemoteEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let text = normalize_whitespace(text);
        if text.is_empty() {
            return Err(EmbedError::EmptyText);
        }
        let key = std::env::var(&self.config.api_key_env).ok();
        let body = EmbedRequest {
            model: &self.config.model,
            input: &text,
        };
        let response: EmbedResponse = self
            .client
            .post(&self.config.endpoint, key.as_deref(), &body)
            .map_err(|f| EmbedError::RemoteUnavailable {
                retryable: f.retryable,
                message: f.message,
            })?;
        let values = match response {
            EmbedResponse::OpenAi { mut data } if !data.is_empty() => data.swap_remove(0).embedding,
            EmbedResponse::Bare { embedding } => embedding,
            EmbedResponse::OpenAi { .. } => {
                return Err(EmbedError::RemoteUnavailable {
                    retryable: false,
                    message: "response contained no embeddings".into(),
                })
            }
        };
        if values.len() != self.dimension {
            return Err(EmbedError::DimensionMismatch {
                expected: self.dimension,
                got: values.len(),
            });
        }
        let vector = EmbeddingVector::new(values)?;
        if self.normalize {
            vector.normalized()
        } else {
            Ok(vector)
        }
    }
}
