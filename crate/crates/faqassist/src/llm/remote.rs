use async_trait::async_trait;
use serde::Deserialize;
use tokio::time::Instant;

use super::{ChatBackend, CompletionRequest, LlmError};
use crate::retry::with_retries;

/// Generic chat-completions client: one user message in, the first choice's
/// message content out. 429 and 5xx responses are retried.
#[derive(Debug, Clone)]
pub struct RemoteChatBackend {
    client: reqwest::Client,
    endpoint: String,
    credential: Option<String>,
    model_id: String,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: Message,
}

#[derive(Deserialize)]
struct Message {
    content: String,
}

impl RemoteChatBackend {
    pub fn new(endpoint: String, credential: Option<String>, model_id: String) -> Self {
        Self {
            client: reqwest::Client::new(),
            endpoint,
            credential,
            model_id,
        }
    }

    async fn attempt(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let body = serde_json::json!({
            "model": self.model_id,
            "messages": [{ "role": "user", "content": req.prompt }],
            "max_tokens": req.max_output_tokens,
            "temperature": req.temperature,
        });
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(token) = &self.credential {
            http = http.bearer_auth(token);
        }
        let resp = http.send().await.map_err(|e| LlmError::Unavailable(e.without_url().to_string()))?;
        let status = resp.status();
        if status.as_u16() == 429 {
            return Err(LlmError::RateLimited);
        }
        if status.is_server_error() {
            return Err(LlmError::Unavailable(format!("status {status}")));
        }
        if !status.is_success() {
            return Err(LlmError::Provider(format!("status {status}")));
        }
        let parsed: ChatResponse = resp.json().await.map_err(|e| LlmError::Provider(e.without_url().to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .map(|c| c.message.content)
            .ok_or_else(|| LlmError::Provider("response has no choices".into()))
    }
}

#[async_trait]
impl ChatBackend for RemoteChatBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let deadline = Instant::now() + req.deadline;
        with_retries(deadline, || self.attempt(req)).await
    }
}
