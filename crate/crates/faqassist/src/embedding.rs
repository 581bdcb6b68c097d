//! Text-embedding providers.
//!
//! The deterministic backend hashes character trigrams (see
//! [`faqassist_core::ngram`]) and is what every offline test runs against.
//! The remote backend posts batches to an embeddings HTTP endpoint.

use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use faqassist_core::ngram::embed_ngrams;
use faqassist_core::vector::Vector;
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::retry::{with_retries, Retryable};

pub const MIN_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("text to embed is empty")]
    EmptyText,
    #[error("embedding provider unavailable: {0}")]
    Unavailable(String),
    #[error("embedding deadline exceeded")]
    DeadlineExceeded,
    #[error("embedding provider returned {found} dims, expected {expected}")]
    BadDimension { expected: usize, found: usize },
}

impl Retryable for EmbedError {
    fn is_retryable(&self) -> bool {
        matches!(self, EmbedError::Unavailable(_))
    }
}

#[async_trait]
pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;

    /// Identifies the embedding function for cache keys.
    fn fingerprint(&self) -> String {
        format!("dim={}", self.dim())
    }

    /// Unit-norm embedding of `text`.
    async fn embed(&self, text: &str) -> Result<Vector, EmbedError>;

    /// Element `i` equals `embed(texts[i])`; any failure fails the batch.
    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        let mut out = Vec::with_capacity(texts.len());
        for t in texts {
            out.push(self.embed(t).await?);
        }
        Ok(out)
    }
}

/// Pure function of `(text, seed, dim)`, optionally delayed to emulate a
/// provider round trip.
#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    dim: usize,
    seed: u64,
    latency: Duration,
}

impl DeterministicEmbedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim: dim.max(MIN_DIM),
            seed,
            latency: Duration::ZERO,
        }
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = latency;
        self
    }

    pub fn embed_now(&self, text: &str) -> Result<Vector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText);
        }
        Ok(embed_ngrams(text, self.dim, self.seed))
    }
}

#[async_trait]
impl Embedder for DeterministicEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("trigram-hash:dim={}:seed={}", self.dim, self.seed)
    }

    async fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        self.embed_now(text)
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        if !self.latency.is_zero() {
            tokio::time::sleep(self.latency).await;
        }
        texts.iter().map(|t| self.embed_now(t)).collect()
    }
}

/// OpenAI-style `/embeddings` client: `{"input": [...], "model": ...}` in,
/// `{"data": [{"embedding": [...]}, ...]}` out.
#[derive(Debug, Clone)]
pub struct RemoteEmbedder {
    client: reqwest::Client,
    endpoint: String,
    credential: Option<String>,
    model: String,
    dim: usize,
    timeout: Duration,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    data: Vec<EmbeddingDatum>,
}

#[derive(Deserialize)]
struct EmbeddingDatum {
    embedding: Vec<f64>,
}

impl RemoteEmbedder {
    pub fn new(endpoint: String, credential: Option<String>, model: String, dim: usize, timeout: Duration) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint,
            credential,
            model,
            dim,
            timeout,
        }
    }

    async fn post(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        let mut req = self
            .client
            .post(&self.endpoint)
            .json(&serde_json::json!({ "input": texts, "model": self.model }));
        if let Some(token) = &self.credential {
            req = req.bearer_auth(token);
        }
        let resp = req.send().await.map_err(|e| EmbedError::Unavailable(e.without_url().to_string()))?;
        let status = resp.status();
        if !status.is_success() {
            return Err(EmbedError::Unavailable(format!("status {status}")));
        }
        let body: EmbeddingResponse = resp
            .json()
            .await
            .map_err(|e| EmbedError::Unavailable(e.without_url().to_string()))?;
        body.data
            .into_iter()
            .map(|d| {
                if d.embedding.len() != self.dim {
                    return Err(EmbedError::BadDimension {
                        expected: self.dim,
                        found: d.embedding.len(),
                    });
                }
                Vector::normalized(d.embedding).map_err(|e| EmbedError::Unavailable(e.to_string()))
            })
            .collect()
    }
}

#[async_trait]
impl Embedder for RemoteEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn fingerprint(&self) -> String {
        format!("remote:{}:dim={}", self.model, self.dim)
    }

    async fn embed(&self, text: &str) -> Result<Vector, EmbedError> {
        let mut v = self.embed_batch(&[text.to_string()]).await?;
        v.pop().ok_or_else(|| EmbedError::Unavailable("empty response".into()))
    }

    async fn embed_batch(&self, texts: &[String]) -> Result<Vec<Vector>, EmbedError> {
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        if texts.iter().any(|t| t.trim().is_empty()) {
            return Err(EmbedError::EmptyText);
        }
        let deadline = Instant::now() + self.timeout;
        let out = tokio::time::timeout_at(deadline, with_retries(deadline, || self.post(texts)))
            .await
            .map_err(|_| EmbedError::DeadlineExceeded)??;
        if out.len() != texts.len() {
            return Err(EmbedError::Unavailable(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                out.len()
            )));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EmbedderSpec {
    Deterministic {
        dim: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default)]
        latency_ms: u64,
    },
    Remote {
        dim: usize,
        /// Name of the environment variable holding the endpoint URL.
        endpoint_env: String,
        /// Name of the environment variable holding the bearer token.
        #[serde(default)]
        credential_env: Option<String>,
        #[serde(default)]
        model: String,
        #[serde(default = "default_timeout_ms")]
        timeout_ms: u64,
    },
}

fn default_timeout_ms() -> u64 {
    2000
}

impl Default for EmbedderSpec {
    fn default() -> Self {
        EmbedderSpec::Deterministic {
            dim: 256,
            seed: 0,
            latency_ms: 0,
        }
    }
}

impl EmbedderSpec {
    pub fn dim(&self) -> usize {
        match self {
            EmbedderSpec::Deterministic { dim, .. } | EmbedderSpec::Remote { dim, .. } => *dim,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.dim() < MIN_DIM {
            return Err(format!("embedder dim must be at least {MIN_DIM}"));
        }
        Ok(())
    }

    pub fn build(&self) -> Result<Arc<dyn Embedder>, String> {
        self.validate()?;
        Ok(match self {
            EmbedderSpec::Deterministic { dim, seed, latency_ms } => {
                Arc::new(DeterministicEmbedder::new(*dim, *seed).with_latency(Duration::from_millis(*latency_ms)))
            }
            EmbedderSpec::Remote {
                dim,
                endpoint_env,
                credential_env,
                model,
                timeout_ms,
            } => {
                let endpoint = std::env::var(endpoint_env).map_err(|_| format!("environment variable {endpoint_env} is not set"))?;
                let credential = credential_env.as_ref().and_then(|k| std::env::var(k).ok());
                Arc::new(RemoteEmbedder::new(
                    endpoint,
                    credential,
                    model.clone(),
                    *dim,
                    Duration::from_millis(*timeout_ms),
                ))
            }
        })
    }
}
