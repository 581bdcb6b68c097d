#![allow(dead_code)]

use std::sync::Arc;
use std::time::Duration;

use faqassist::config::Tokens;
use faqassist::embedding::DeterministicEmbedder;
use faqassist::engine::{Engine, EngineConfig};
use faqassist::llm::scripted::ScriptedBehavior;
use faqassist::llm::LlmGateway;
use faqassist::rag::{RagClient, ScriptedRag};
use faqassist::service::{router, AppState};
use faqassist::store::{EntryFields, FaqStore, StoreConfig};
use futures::StreamExt;
use serde_json::Value;

pub const DIM: usize = 256;
pub const AGENT: &str = "agent-token";
pub const SUPERVISOR: &str = "supervisor-token";

pub const FAQS: &[(&str, &str, Option<&str>)] = &[
    ("F1", "How do I reset my router?", Some("Unplug it for 30 seconds.")),
    ("F2", "When is my bill due each month?", Some("On the 15th.")),
    ("F3", "Can I upgrade my data plan?", None),
    ("F4", "Why was I charged a late fee?", Some("Payment arrived after the due date.")),
];

pub fn embedder() -> DeterministicEmbedder {
    DeterministicEmbedder::new(DIM, 0)
}

pub async fn store_with(entries: &[(&str, &str, Option<&str>)]) -> Arc<FaqStore> {
    let store = FaqStore::in_memory(StoreConfig::new(DIM), Arc::new(embedder()));
    for (qid, q, a) in entries {
        store
            .upsert(EntryFields {
                qid: Some(qid.to_string()),
                question: q.to_string(),
                answer: a.map(str::to_string),
                ..Default::default()
            })
            .await
            .unwrap();
    }
    Arc::new(store)
}

pub fn engine(store: Arc<FaqStore>, behavior: ScriptedBehavior, config: EngineConfig) -> Engine {
    Engine::new(
        config,
        store,
        Arc::new(LlmGateway::scripted(behavior)),
        RagClient::scripted(ScriptedRag::default()),
    )
}

pub async fn offline_engine() -> Engine {
    engine(store_with(FAQS).await, ScriptedBehavior::offline(), EngineConfig::default())
}

pub fn tokens() -> Tokens {
    Tokens {
        agent: AGENT.into(),
        supervisor: SUPERVISOR.into(),
    }
}

pub struct TestServer {
    pub base: String,
    pub http: reqwest::Client,
    pub state: AppState,
}

pub async fn spawn(engine: Engine) -> TestServer {
    let state = AppState::new(Arc::new(engine), tokens());
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = router(state.clone());
    tokio::spawn(async move {
        axum::serve(listener, app).await.unwrap();
    });
    TestServer {
        base: format!("http://{addr}"),
        http: reqwest::Client::new(),
        state,
    }
}

impl TestServer {
    pub fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    pub fn agent(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        self.http.request(method, self.url(path)).bearer_auth(AGENT)
    }

    pub fn supervisor(&self, method: reqwest::Method, path: &str) -> reqwest::RequestBuilder {
        self.http.request(method, self.url(path)).bearer_auth(SUPERVISOR)
    }

    pub async fn start_session(&self) -> String {
        let resp = self.agent(reqwest::Method::POST, "/v1/sessions").send().await.unwrap();
        assert_eq!(resp.status(), 201);
        resp.json::<Value>().await.unwrap()["session_id"].as_str().unwrap().to_string()
    }

    pub async fn turn(&self, session: &str, speaker: &str, text: &str) -> Value {
        let resp = self
            .agent(reqwest::Method::POST, &format!("/v1/sessions/{session}/turns"))
            .json(&serde_json::json!({ "speaker": speaker, "text": text }))
            .send()
            .await
            .unwrap();
        assert_eq!(resp.status(), 202, "{:?}", resp.text().await);
        resp.json().await.unwrap()
    }

    pub async fn metrics(&self) -> Value {
        self.http.get(self.url("/v1/metrics")).send().await.unwrap().json().await.unwrap()
    }

    /// Waits until no background suggestion round is running.
    pub async fn settle(&self) {
        for _ in 0..2000 {
            if self.state.suggest_in_flight() == 0 {
                return;
            }
            tokio::time::sleep(Duration::from_millis(5)).await;
        }
        panic!("suggestion rounds did not finish");
    }

    pub async fn events(&self, session: &str, last_seq: Option<u64>) -> EventReader {
        let path = match last_seq {
            Some(n) => format!("/v1/sessions/{session}/events?last_seq={n}"),
            None => format!("/v1/sessions/{session}/events"),
        };
        let resp = self.agent(reqwest::Method::GET, &path).send().await.unwrap();
        assert_eq!(resp.status(), 200);
        EventReader::new(resp)
    }
}

#[derive(Debug, Clone)]
pub struct Frame {
    pub event: String,
    pub id: Option<u64>,
    pub data: Value,
}

/// Minimal server-sent-events parser over a streaming response.
pub struct EventReader {
    stream: futures::stream::BoxStream<'static, reqwest::Result<Vec<u8>>>,
    buf: String,
}

impl EventReader {
    pub fn new(resp: reqwest::Response) -> Self {
        Self {
            stream: resp.bytes_stream().map(|r| r.map(|b| b.to_vec())).boxed(),
            buf: String::new(),
        }
    }

    /// Next data-bearing frame, or `None` on timeout or end of stream.
    pub async fn next(&mut self, wait: Duration) -> Option<Frame> {
        let deadline = tokio::time::Instant::now() + wait;
        loop {
            while let Some(end) = self.buf.find("\n\n") {
                let block: String = self.buf.drain(..end + 2).collect();
                let mut frame = Frame {
                    event: "message".into(),
                    id: None,
                    data: Value::Null,
                };
                let mut data = String::new();
                for line in block.lines() {
                    if let Some(v) = line.strip_prefix("event:") {
                        frame.event = v.trim().to_string();
                    } else if let Some(v) = line.strip_prefix("id:") {
                        frame.id = v.trim().parse().ok();
                    } else if let Some(v) = line.strip_prefix("data:") {
                        data.push_str(v.trim_start());
                    }
                }
                if !data.is_empty() {
                    frame.data = serde_json::from_str(&data).unwrap();
                    return Some(frame);
                }
            }
            let chunk = tokio::time::timeout_at(deadline, self.stream.next()).await.ok()??.ok()?;
            self.buf.push_str(&String::from_utf8_lossy(&chunk));
        }
    }

    /// Collects frames until `wait` passes without a new one.
    pub async fn drain(&mut self, wait: Duration) -> Vec<Frame> {
        let mut out = Vec::new();
        while let Some(f) = self.next(wait).await {
            out.push(f);
        }
        out
    }
}
