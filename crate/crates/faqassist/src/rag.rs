//! Client for the external answer pipeline (retrieval-augmented generation
//! over knowledge-base articles) plus the authoritative RAG cost counter.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

use crate::retry::{with_retries, Retryable};

pub const DEFAULT_RAG_DEADLINE: Duration = Duration::from_secs(5);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RagRequest {
    pub question: String,
    pub context_hint: Option<String>,
    pub deadline: Duration,
}

impl RagRequest {
    pub fn new(question: impl Into<String>) -> Self {
        Self {
            question: question.into(),
            context_hint: None,
            deadline: DEFAULT_RAG_DEADLINE,
        }
    }

    pub fn with_context(mut self, hint: impl Into<String>) -> Self {
        self.context_hint = Some(hint.into());
        self
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagAnswer {
    pub text: String,
    #[serde(default)]
    pub source_refs: Vec<String>,
    #[serde(skip)]
    pub latency: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RagError {
    #[error("question is empty")]
    EmptyQuestion,
    #[error("answer service deadline exceeded")]
    DeadlineExceeded,
    #[error("answer service unavailable: {0}")]
    Unavailable(String),
}

impl Retryable for RagError {
    fn is_retryable(&self) -> bool {
        matches!(self, RagError::Unavailable(_))
    }
}

#[async_trait]
pub trait RagBackend: Send + Sync {
    async fn retrieve(&self, req: &RagRequest) -> Result<RagAnswer, RagError>;
}

/// RAG calls made versus avoided by answering from the FAQ store.
#[derive(Debug, Default)]
pub struct RagCallCounter {
    made: AtomicU64,
    bypassed: AtomicU64,
}

impl RagCallCounter {
    pub fn calls_made(&self) -> u64 {
        self.made.load(Ordering::SeqCst)
    }

    pub fn calls_bypassed(&self) -> u64 {
        self.bypassed.load(Ordering::SeqCst)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RagFailure {
    /// Never answers; the request deadline fires.
    Timeout,
    Unavailable,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RagRule {
    /// Case-insensitive substring of the question.
    pub contains: String,
    pub answer: String,
    #[serde(default)]
    pub source_refs: Vec<String>,
}

/// Canned answers keyed by question substrings. The default answer may use
/// `{question}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedRag {
    #[serde(default)]
    pub rules: Vec<RagRule>,
    #[serde(default = "default_rag_answer")]
    pub default_answer: String,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub failure: Option<RagFailure>,
}

fn default_rag_answer() -> String {
    "Per the knowledge base: {question}".into()
}

impl Default for ScriptedRag {
    fn default() -> Self {
        Self {
            rules: Vec::new(),
            default_answer: default_rag_answer(),
            latency_ms: 0,
            failure: None,
        }
    }
}

impl ScriptedRag {
    pub fn rule(mut self, contains: &str, answer: &str) -> Self {
        self.rules.push(RagRule {
            contains: contains.to_string(),
            answer: answer.to_string(),
            source_refs: Vec::new(),
        });
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency_ms = latency.as_millis() as u64;
        self
    }

    pub fn with_failure(mut self, failure: RagFailure) -> Self {
        self.failure = Some(failure);
        self
    }
}

#[async_trait]
impl RagBackend for ScriptedRag {
    async fn retrieve(&self, req: &RagRequest) -> Result<RagAnswer, RagError> {
        if self.latency_ms > 0 {
            tokio::time::sleep(Duration::from_millis(self.latency_ms)).await;
        }
        match self.failure {
            Some(RagFailure::Timeout) => std::future::pending().await,
            Some(RagFailure::Unavailable) => return Err(RagError::Unavailable("scripted failure".into())),
            None => {}
        }
        let lowered = req.question.to_lowercase();
        let (text, source_refs) = match self.rules.iter().find(|r| lowered.contains(&r.contains.to_lowercase())) {
            Some(r) => (r.answer.clone(), r.source_refs.clone()),
            None => (self.default_answer.replace("{question}", req.question.trim()), Vec::new()),
        };
        Ok(RagAnswer {
            text,
            source_refs,
            latency: Duration::ZERO,
        })
    }
}

/// JSON over HTTP: `{"question", "context_hint"}` in, `{"answer",
/// "source_refs"}` out. 429 and 5xx are retried.
#[derive(Debug, Clone)]
pub struct RemoteRag {
    client: reqwest::Client,
    endpoint: String,
    credential: Option<String>,
}

#[derive(Deserialize)]
struct RemoteAnswer {
    answer: String,
    #[serde(default)]
    source_refs: Vec<String>,
}

impl RemoteRag {
    pub fn new(endpoint: String, credential: Option<String>) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint,
            credential,
        }
    }

    async fn attempt(&self, req: &RagRequest) -> Result<RagAnswer, RagError> {
        let body = serde_json::json!({
            "question": req.question,
            "context_hint": req.context_hint,
        });
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.credential {
            http = http.bearer_auth(token);
        }
        let resp = http.send().await.map_err(|e| RagError::Unavailable(e.without_url().to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(RagError::Unavailable(format!("status {status}")));
        }
        if !status.is_success() {
            // Not retryable, but the caller sees it the same way.
            return Err(RagError::Unavailable(format!("rejected with status {status}")));
        }
        let parsed: RemoteAnswer = resp.json().await.map_err(|e| RagError::Unavailable(e.without_url().to_string()))?;
        Ok(RagAnswer {
            text: parsed.answer,
            source_refs: parsed.source_refs,
            latency: Duration::ZERO,
        })
    }
}

#[async_trait]
impl RagBackend for RemoteRag {
    async fn retrieve(&self, req: &RagRequest) -> Result<RagAnswer, RagError> {
        self.attempt(req).await
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RagSpec {
    Remote {
        endpoint_env: String,
        #[serde(default)]
        credential_env: Option<String>,
    },
    Scripted(ScriptedRag),
}

impl Default for RagSpec {
    fn default() -> Self {
        RagSpec::Scripted(ScriptedRag::default())
    }
}

impl RagSpec {
    pub fn build(&self) -> Result<RagClient, String> {
        match self {
            RagSpec::Remote {
                endpoint_env,
                credential_env,
            } => {
                let endpoint = std::env::var(endpoint_env).map_err(|_| format!("environment variable {endpoint_env} is not set"))?;
                let credential = credential_env.as_ref().and_then(|k| std::env::var(k).ok());
                Ok(RagClient::new(Arc::new(RemoteRag::new(endpoint, credential))))
            }
            RagSpec::Scripted(s) => Ok(RagClient::new(Arc::new(s.clone()))),
        }
    }
}

/// Deadline-bounded access to a [`RagBackend`] with call accounting.
#[derive(Clone)]
pub struct RagClient {
    backend: Arc<dyn RagBackend>,
    counter: Arc<RagCallCounter>,
}

impl std::fmt::Debug for RagClient {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RagClient").field("counter", &self.counter).finish()
    }
}

impl RagClient {
    pub fn new(backend: Arc<dyn RagBackend>) -> Self {
        Self {
            backend,
            counter: Arc::default(),
        }
    }

    pub fn scripted(script: ScriptedRag) -> Self {
        Self::new(Arc::new(script))
    }

    /// Same backend, zeroed counter.
    pub fn with_fresh_counter(&self) -> Self {
        Self::new(self.backend.clone())
    }

    pub fn counter(&self) -> &RagCallCounter {
        &self.counter
    }

    /// One counted call, retried on transient failures, never running past
    /// `req.deadline`.
    pub async fn retrieve(&self, req: &RagRequest) -> Result<RagAnswer, RagError> {
        if req.question.trim().is_empty() {
            return Err(RagError::EmptyQuestion);
        }
        self.counter.made.fetch_add(1, Ordering::SeqCst);
        let start = Instant::now();
        let deadline = start + req.deadline;
        let attempt = with_retries(deadline, || self.backend.retrieve(req));
        let mut answer = tokio::time::timeout_at(deadline, attempt)
            .await
            .map_err(|_| RagError::DeadlineExceeded)??;
        if answer.text.trim().is_empty() {
            return Err(RagError::Unavailable("empty answer".into()));
        }
        answer.latency = start.elapsed();
        Ok(answer)
    }

    pub fn record_bypass(&self) {
        self.counter.bypassed.fetch_add(1, Ordering::SeqCst);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::AtomicU32;

    #[tokio::test(start_paused = true)]
    async fn scripted_rule_answers() {
        let rag = RagClient::scripted(ScriptedRag::default().rule("reset router", "Hold the button 10 s"));
        let a = rag.retrieve(&RagRequest::new("How do I Reset Router settings?")).await.unwrap();
        assert_eq!(a.text, "Hold the button 10 s");
        let b = rag.retrieve(&RagRequest::new("Where is my bill?")).await.unwrap();
        assert_eq!(b.text, "Per the knowledge base: Where is my bill?");
        assert_eq!(rag.counter().calls_made(), 2);
        assert_eq!(rag.counter().calls_bypassed(), 0);
    }

    #[tokio::test(start_paused = true)]
    async fn deadline_counts_once() {
        let rag = RagClient::scripted(ScriptedRag::default().with_latency(Duration::from_secs(3)));
        let start = Instant::now();
        let err = rag
            .retrieve(&RagRequest::new("q").with_deadline(Duration::from_secs(1)))
            .await
            .unwrap_err();
        assert_eq!(err, RagError::DeadlineExceeded);
        assert_eq!(start.elapsed(), Duration::from_secs(1));
        assert_eq!(rag.counter().calls_made(), 1);
    }

    struct Flaky(AtomicU32);

    #[async_trait]
    impl RagBackend for Flaky {
        async fn retrieve(&self, _req: &RagRequest) -> Result<RagAnswer, RagError> {
            if self.0.fetch_add(1, Ordering::SeqCst) < 2 {
                Err(RagError::Unavailable("blip".into()))
            } else {
                Ok(RagAnswer {
                    text: "ok".into(),
                    source_refs: vec![],
                    latency: Duration::ZERO,
                })
            }
        }
    }

    #[tokio::test(start_paused = true)]
    async fn retries_do_not_double_count() {
        let backend = Arc::new(Flaky(AtomicU32::new(0)));
        let rag = RagClient::new(backend.clone());
        assert_eq!(rag.retrieve(&RagRequest::new("q")).await.unwrap().text, "ok");
        assert_eq!(backend.0.load(Ordering::SeqCst), 3);
        assert_eq!(rag.counter().calls_made(), 1);
    }

    #[tokio::test]
    async fn bypass_is_independent() {
        let rag = RagClient::scripted(ScriptedRag::default());
        rag.record_bypass();
        assert_eq!(rag.counter().calls_bypassed(), 1);
        for _ in 0..4 {
            rag.record_bypass();
        }
        assert_eq!(rag.counter().calls_bypassed(), 5);
        assert_eq!(rag.counter().calls_made(), 0);
        assert_eq!(rag.retrieve(&RagRequest::new(" ")).await, Err(RagError::EmptyQuestion));
        assert_eq!(rag.counter().calls_made(), 0);
    }

    #[tokio::test(start_paused = true)]
    async fn unavailable_surfaces_after_retries() {
        let rag = RagClient::scripted(ScriptedRag::default().with_failure(RagFailure::Unavailable));
        assert!(matches!(rag.retrieve(&RagRequest::new("q")).await, Err(RagError::Unavailable(_))));
        assert_eq!(rag.counter().calls_made(), 1);
    }
}
