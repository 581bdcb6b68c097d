//! HTTP front door under `/v1`: sessions, turn ingestion with automatic
//! suggestion rounds, server-sent events, selection and tagging, FAQ
//! management for supervisors, metrics and health.

mod events;
mod handlers;

use std::collections::HashMap;
use std::future::Future;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use axum::extract::{Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use faqassist_core::ConversationError;
use parking_lot::RwLock;
use serde::Serialize;

pub use events::{ApiEvent, EventKind, EventLog, Overrun, Subscription, REPLAY_BUFFER};
pub use handlers::{FaqList, FaqView, MetricsReport, SessionView, TurnView};

use crate::config::{Config, ConfigError, Tokens};
use crate::engine::{Engine, EngineError, Session, SuggestionSet};
use crate::rag::RagError;
use crate::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Agent,
    Supervisor,
}

pub(crate) struct SessionHandle {
    session: tokio::sync::Mutex<Session>,
    events: EventLog,
}

#[derive(Default)]
struct Counters {
    sessions_started: AtomicU64,
    suggest_in_flight: AtomicU64,
    suggest_failures: AtomicU64,
    events: [AtomicU64; EventKind::ALL.len()],
}

struct Shared {
    engine: Arc<Engine>,
    tokens: Tokens,
    sessions: RwLock<HashMap<String, Arc<SessionHandle>>>,
    counters: Counters,
}

/// Cheap to clone; every clone serves the same sessions.
#[derive(Clone)]
pub struct AppState {
    shared: Arc<Shared>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>, tokens: Tokens) -> Self {
        Self {
            shared: Arc::new(Shared {
                engine,
                tokens,
                sessions: RwLock::new(HashMap::new()),
                counters: Counters::default(),
            }),
        }
    }

    /// Providers, store and engine as configured. `scripted` swaps every
    /// remote provider for its offline stand-in.
    pub async fn from_config(config: &Config, tokens: Tokens, scripted: bool) -> Result<Self, ConfigError> {
        let engine = config.engine(scripted).await?;
        Ok(Self::new(Arc::new(engine), tokens))
    }

    pub fn engine(&self) -> &Arc<Engine> {
        &self.shared.engine
    }

    pub fn session_count(&self) -> usize {
        self.shared.sessions.read().len()
    }

    /// Suggestion rounds scheduled by turn ingestion and not yet finished.
    pub fn suggest_in_flight(&self) -> u64 {
        self.shared.counters.suggest_in_flight.load(Ordering::SeqCst)
    }

    fn session(&self, id: &str) -> Result<Arc<SessionHandle>, ApiError> {
        self.shared
            .sessions
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}")))
    }

    fn publish(&self, handle: &SessionHandle, kind: EventKind, payload: impl Serialize) -> ApiEvent {
        let payload = serde_json::to_value(payload).unwrap_or(serde_json::Value::Null);
        let event = handle.events.publish(kind, payload);
        let slot = EventKind::ALL.iter().position(|k| *k == kind).unwrap_or(0);
        self.shared.counters.events[slot].fetch_add(1, Ordering::SeqCst);
        event
    }

    /// Pushes a finished set, plus a notice when a stage degraded.
    fn publish_set(&self, handle: &SessionHandle, set: &SuggestionSet) {
        self.publish(handle, EventKind::SuggestionSet, set);
        if set.degraded {
            self.publish(
                handle,
                EventKind::DegradedNotice,
                serde_json::json!({
                    "set_seq": set.set_seq,
                    "matching": set.matching,
                    "generation": set.generation,
                }),
            );
        }
    }

    /// Runs one suggestion round in the background.
    fn schedule_round(&self, handle: Arc<SessionHandle>) {
        self.shared.counters.suggest_in_flight.fetch_add(1, Ordering::SeqCst);
        let state = self.clone();
        tokio::spawn(async move {
            let outcome = {
                let mut session = handle.session.lock().await;
                state.shared.engine.suggest(&mut session).await
            };
            match outcome {
                Ok(set) => state.publish_set(&handle, &set),
                Err(e) => {
                    state.shared.counters.suggest_failures.fetch_add(1, Ordering::SeqCst);
                    tracing::warn!(error = %e, "suggestion round failed");
                }
            }
            state.shared.counters.suggest_in_flight.fetch_sub(1, Ordering::SeqCst);
        });
    }
}

/// JSON error body with a stable machine-readable code.
#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
    detail: Option<serde_json::Value>,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        Self {
            status,
            code,
            message: message.into(),
            detail: None,
        }
    }

    fn invalid(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_request", message)
    }

    pub fn status(&self) -> StatusCode {
        self.status
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let mut body = serde_json::json!({ "error": self.code, "message": self.message });
        if let Some(detail) = self.detail {
            body["detail"] = detail;
        }
        (self.status, Json(body)).into_response()
    }
}

fn store_status(e: &StoreError) -> (StatusCode, &'static str) {
    match e {
        StoreError::NotFound(_) => (StatusCode::NOT_FOUND, "not_found"),
        StoreError::EmptyQuestion | StoreError::EmptyAnswer | StoreError::ZeroK => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
        StoreError::Embed(_) => (StatusCode::BAD_GATEWAY, "embedder_unavailable"),
        _ => (StatusCode::INTERNAL_SERVER_ERROR, "store_failure"),
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let (status, code) = store_status(&e);
        Self::new(status, code, e.to_string())
    }
}

impl From<EngineError> for ApiError {
    fn from(e: EngineError) -> Self {
        let (status, code) = match &e {
            EngineError::UnknownSuggestion(_) => (StatusCode::NOT_FOUND, "unknown_suggestion"),
            EngineError::NotGenerated => (StatusCode::CONFLICT, "not_generated"),
            EngineError::NotYetAnswered => (StatusCode::CONFLICT, "not_yet_answered"),
            EngineError::EmptyText | EngineError::Conversation(ConversationError::EmptyText) => {
                (StatusCode::UNPROCESSABLE_ENTITY, "empty_text")
            }
            EngineError::Conversation(ConversationError::EmptyTranscript) => (StatusCode::CONFLICT, "empty_conversation"),
            EngineError::Conversation(_) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            EngineError::Rag(RagError::DeadlineExceeded) => (StatusCode::GATEWAY_TIMEOUT, "rag_deadline_exceeded"),
            EngineError::Rag(RagError::Unavailable(_)) => (StatusCode::BAD_GATEWAY, "rag_unavailable"),
            EngineError::Rag(RagError::EmptyQuestion) => (StatusCode::UNPROCESSABLE_ENTITY, "invalid_request"),
            EngineError::Store(inner) => store_status(inner),
            EngineError::Embed(_) => (StatusCode::BAD_GATEWAY, "embedder_unavailable"),
        };
        Self::new(status, code, e.to_string())
    }
}

fn bearer(req: &Request) -> Option<&str> {
    req.headers()
        .get(header::AUTHORIZATION)?
        .to_str()
        .ok()?
        .strip_prefix("Bearer ")
        .map(str::trim)
}

async fn require(state: &AppState, need: Role, req: Request, next: Next) -> Response {
    let tokens = &state.shared.tokens;
    let role = match bearer(&req) {
        Some(t) if t == tokens.supervisor => Role::Supervisor,
        Some(t) if t == tokens.agent => Role::Agent,
        _ => return ApiError::new(StatusCode::UNAUTHORIZED, "unauthenticated", "missing or unknown bearer token").into_response(),
    };
    if need == Role::Supervisor && role != Role::Supervisor {
        return ApiError::new(StatusCode::FORBIDDEN, "forbidden", "supervisor token required").into_response();
    }
    next.run(req).await
}

async fn agent_auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    require(&state, Role::Agent, req, next).await
}

async fn supervisor_auth(State(state): State<AppState>, req: Request, next: Next) -> Response {
    require(&state, Role::Supervisor, req, next).await
}

pub fn router(state: AppState) -> Router {
    let agent = Router::new()
        .route("/v1/sessions", post(handlers::start_session))
        .route("/v1/sessions/{id}", get(handlers::get_session).delete(handlers::end_session))
        .route("/v1/sessions/{id}/turns", post(handlers::ingest_turn))
        .route("/v1/sessions/{id}/trigger", post(handlers::manual_trigger))
        .route("/v1/sessions/{id}/events", get(handlers::stream_events))
        .route("/v1/sessions/{id}/select", post(handlers::select_suggestion))
        .route("/v1/sessions/{id}/tag-faq", post(handlers::tag_faq))
        .route_layer(middleware::from_fn_with_state(state.clone(), agent_auth));
    let supervisor = Router::new()
        .route("/v1/faqs", get(handlers::list_faqs).post(handlers::create_faq))
        .route(
            "/v1/faqs/{qid}",
            get(handlers::get_faq).put(handlers::update_faq).delete(handlers::delete_faq),
        )
        .route_layer(middleware::from_fn_with_state(state.clone(), supervisor_auth));
    Router::new()
        .merge(agent)
        .merge(supervisor)
        .route("/v1/metrics", get(handlers::metrics))
        .route("/healthz", get(handlers::healthz))
        .route("/v1/healthz", get(handlers::healthz))
        .with_state(state)
}

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("cannot bind {addr}: {source}")]
    Bind { addr: String, source: std::io::Error },
    #[error("server stopped: {0}")]
    Server(std::io::Error),
}

/// Binds `config.service.listen` and serves until `shutdown` resolves.
/// Configuration problems surface before anything is bound.
pub async fn serve(config: &Config, scripted: bool, shutdown: impl Future<Output = ()> + Send + 'static) -> Result<(), ServeError> {
    let tokens = config.service.auth.resolve()?;
    let state = AppState::from_config(config, tokens, scripted).await?;
    let addr: SocketAddr = config
        .service
        .listen
        .parse()
        .map_err(|e| ConfigError::Invalid(format!("service.listen: {e}")))?;
    let listener = tokio::net::TcpListener::bind(addr).await.map_err(|source| ServeError::Bind {
        addr: addr.to_string(),
        source,
    })?;
    tracing::info!(%addr, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(ServeError::Server)
}
