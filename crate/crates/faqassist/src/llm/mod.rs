//! Provider-neutral chat completion with deadlines and list-shaped output.

mod prompts;
mod remote;
pub mod scripted;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;
use faqassist_core::list_output::parse_list;
use serde::{Deserialize, Serialize};
use tokio::sync::Semaphore;
use tokio::time::Instant;

pub use prompts::{PromptSet, PromptTemplate};
pub use remote::RemoteChatBackend;
pub use scripted::{FailureMode, Heuristic, PromptMatcher, ScriptRule, ScriptedBackend, ScriptedBehavior, ScriptedResponse};

use crate::retry::Retryable;

pub const DEFAULT_DEADLINE: Duration = Duration::from_secs(2);
const REPROMPT_SUFFIX: &str =
    "\n\nYour previous reply could not be read. Reply ONLY with a numbered list, one item per line, or the single word: none";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    Match,
    Generate,
    Extract,
    Critic,
    Summarize,
    Merge,
    Review,
}

impl RoleTag {
    pub const ALL: [RoleTag; 7] = [
        RoleTag::Match,
        RoleTag::Generate,
        RoleTag::Extract,
        RoleTag::Critic,
        RoleTag::Summarize,
        RoleTag::Merge,
        RoleTag::Review,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RoleTag::Match => "match",
            RoleTag::Generate => "generate",
            RoleTag::Extract => "extract",
            RoleTag::Critic => "critic",
            RoleTag::Summarize => "summarize",
            RoleTag::Merge => "merge",
            RoleTag::Review => "review",
        }
    }

    /// Selection roles run greedy; productive roles get a little sampling.
    pub fn default_temperature(self) -> f64 {
        match self {
            RoleTag::Generate | RoleTag::Extract => 0.3,
            _ => 0.0,
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub prompt: String,
    pub max_output_tokens: u32,
    pub temperature: f64,
    pub deadline: Duration,
    pub role: RoleTag,
}

impl CompletionRequest {
    pub fn new(role: RoleTag, prompt: impl Into<String>) -> Self {
        Self {
            prompt: prompt.into(),
            max_output_tokens: 512,
            temperature: role.default_temperature(),
            deadline: DEFAULT_DEADLINE,
            role,
        }
    }

    pub fn with_deadline(mut self, deadline: Duration) -> Self {
        self.deadline = deadline;
        self
    }

    fn validate(&self) -> Result<(), LlmError> {
        if self.prompt.trim().is_empty() {
            return Err(LlmError::InvalidRequest("prompt is empty".into()));
        }
        if self.deadline.is_zero() {
            return Err(LlmError::InvalidRequest("deadline must be positive".into()));
        }
        if self.temperature.is_nan() || self.temperature < 0.0 {
            return Err(LlmError::InvalidRequest("temperature must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LlmError {
    #[error("invalid completion request: {0}")]
    InvalidRequest(String),
    #[error("completion deadline exceeded")]
    DeadlineExceeded,
    #[error("provider rate limited the request")]
    RateLimited,
    #[error("provider temporarily unavailable: {0}")]
    Unavailable(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("model output could not be parsed as a list")]
    Unparseable,
}

impl Retryable for LlmError {
    fn is_retryable(&self) -> bool {
        matches!(self, LlmError::RateLimited | LlmError::Unavailable(_))
    }
}

#[async_trait]
pub trait ChatBackend: Send + Sync {
    fn model_id(&self) -> &str;

    /// One completion. Deadline enforcement belongs to the gateway; backends
    /// may use `req.deadline` to bound their own retries.
    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ProviderSpec {
    Remote {
        model_id: String,
        /// Environment variable holding the chat-completions URL.
        endpoint_env: String,
        /// Environment variable holding the bearer token.
        #[serde(default)]
        credential_env: Option<String>,
        #[serde(default)]
        max_concurrency: Option<usize>,
    },
    Scripted {
        #[serde(default = "scripted_model_id")]
        model_id: String,
        #[serde(default)]
        script: ScriptedBehavior,
        #[serde(default)]
        max_concurrency: Option<usize>,
    },
}

fn scripted_model_id() -> String {
    "scripted".into()
}

impl Default for ProviderSpec {
    fn default() -> Self {
        ProviderSpec::Scripted {
            model_id: scripted_model_id(),
            script: ScriptedBehavior::offline(),
            max_concurrency: None,
        }
    }
}

impl ProviderSpec {
    pub fn scripted(script: ScriptedBehavior) -> Self {
        ProviderSpec::Scripted {
            model_id: scripted_model_id(),
            script,
            max_concurrency: None,
        }
    }

    pub fn build(&self) -> Result<LlmGateway, String> {
        match self {
            ProviderSpec::Remote {
                model_id,
                endpoint_env,
                credential_env,
                max_concurrency,
            } => {
                let endpoint = std::env::var(endpoint_env).map_err(|_| format!("environment variable {endpoint_env} is not set"))?;
                let credential = credential_env.as_ref().and_then(|k| std::env::var(k).ok());
                let backend = RemoteChatBackend::new(endpoint, credential, model_id.clone());
                Ok(LlmGateway::new(Arc::new(backend)).with_max_concurrency(*max_concurrency))
            }
            ProviderSpec::Scripted {
                model_id,
                script,
                max_concurrency,
            } => {
                let backend = ScriptedBackend::new(script.clone()).with_model_id(model_id.clone());
                Ok(LlmGateway::new(Arc::new(backend)).with_max_concurrency(*max_concurrency))
            }
        }
    }
}

/// Shared entry point for every completion: enforces deadlines, bounds
/// in-flight calls, and counts calls per role.
pub struct LlmGateway {
    backend: Arc<dyn ChatBackend>,
    limiter: Option<Arc<Semaphore>>,
    calls: AtomicU64,
    by_role: [AtomicU64; RoleTag::ALL.len()],
}

impl std::fmt::Debug for LlmGateway {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmGateway")
            .field("model", &self.backend.model_id())
            .field("calls", &self.calls())
            .finish()
    }
}

impl LlmGateway {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            limiter: None,
            calls: AtomicU64::new(0),
            by_role: Default::default(),
        }
    }

    pub fn scripted(script: ScriptedBehavior) -> Self {
        Self::new(Arc::new(ScriptedBackend::new(script)))
    }

    pub fn with_max_concurrency(mut self, limit: Option<usize>) -> Self {
        self.limiter = limit.map(|n| Arc::new(Semaphore::new(n.max(1))));
        self
    }

    pub fn model_id(&self) -> &str {
        self.backend.model_id()
    }

    /// Completions attempted so far, including reprompts.
    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn calls_for(&self, role: RoleTag) -> u64 {
        self.by_role[role.slot()].load(Ordering::Relaxed)
    }

    /// Model text, or `DeadlineExceeded` once `req.deadline` has elapsed.
    pub async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        req.validate()?;
        let deadline = Instant::now() + req.deadline;
        self.complete_until(req, deadline).await
    }

    async fn complete_until(&self, req: &CompletionRequest, deadline: Instant) -> Result<String, LlmError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.by_role[req.role.slot()].fetch_add(1, Ordering::Relaxed);
        let work = async {
            let _permit = match &self.limiter {
                Some(s) => Some(s.acquire().await.map_err(|_| LlmError::Provider("gateway closed".into()))?),
                None => None,
            };
            self.backend.complete(req).await
        };
        match tokio::time::timeout_at(deadline, work).await {
            Ok(r) => r,
            Err(_) => {
                tracing::debug!(role = req.role.as_str(), "completion deadline exceeded");
                Err(LlmError::DeadlineExceeded)
            }
        }
    }

    /// Completion parsed as a list of at most `n` items. Output that is not
    /// a list earns one reprompt within the same deadline.
    pub async fn complete_list(&self, req: &CompletionRequest, n: usize) -> Result<Vec<String>, LlmError> {
        if n == 0 {
            return Err(LlmError::InvalidRequest("expected count must be at least 1".into()));
        }
        req.validate()?;
        let deadline = Instant::now() + req.deadline;
        let first = self.complete_until(req, deadline).await?;
        if let Some(items) = parse_list(&first, n) {
            return Ok(items);
        }
        tracing::debug!(role = req.role.as_str(), "unparseable list output, reprompting");
        let mut retry = req.clone();
        retry.prompt.push_str(REPROMPT_SUFFIX);
        let second = self.complete_until(&retry, deadline).await?;
        parse_list(&second, n).ok_or(LlmError::Unparseable)
    }
}
