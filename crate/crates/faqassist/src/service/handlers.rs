use std::convert::Infallible;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::sse::{Event, KeepAlive, Sse};
use axum::response::IntoResponse;
use axum::Json;
use faqassist_core::conversation::{Speaker, Turn};
use faqassist_core::trigger::TriggerMode;
use futures::stream::{self, Stream, StreamExt};
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast::error::RecvError;

use super::events::{ApiEvent, EventKind, EventLog, Overrun};
use super::{ApiError, AppState, SessionHandle};
use crate::engine::{Answer, LedgerSnapshot, SuggestionSet};
use crate::store::{EntryFields, FaqEntry, Source, TagOutcome};

const DEFAULT_PAGE: usize = 50;
const MAX_PAGE: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TurnView {
    pub index: usize,
    pub speaker: String,
    pub text: String,
    pub timestamp_ms: Option<i64>,
}

impl From<&Turn> for TurnView {
    fn from(t: &Turn) -> Self {
        Self {
            index: t.index,
            speaker: t.speaker.as_str().to_string(),
            text: t.text.clone(),
            timestamp_ms: t.timestamp_ms,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub turns: Vec<TurnView>,
    pub sets_produced: u64,
    pub last_trigger_index: Option<usize>,
    /// Sequence of the newest event.
    pub last_sequence: u64,
    pub active_set: Option<SuggestionSet>,
    pub answered: Vec<String>,
}

#[derive(Serialize)]
pub(super) struct Created {
    session_id: String,
}

pub(super) async fn start_session(State(state): State<AppState>) -> impl IntoResponse {
    let id = uuid::Uuid::new_v4().simple().to_string();
    let handle = Arc::new(SessionHandle {
        session: tokio::sync::Mutex::new(state.shared.engine.new_session(id.clone())),
        events: EventLog::new(id.clone()),
    });
    state.shared.sessions.write().insert(id.clone(), handle);
    state.shared.counters.sessions_started.fetch_add(1, Ordering::SeqCst);
    (StatusCode::CREATED, Json(Created { session_id: id }))
}

pub(super) async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let handle = state.session(&id)?;
    let session = handle.session.lock().await;
    Ok(Json(SessionView {
        session_id: id,
        turns: session.conversation().turns().iter().map(TurnView::from).collect(),
        sets_produced: session.sets_produced(),
        last_trigger_index: session.last_trigger_index(),
        last_sequence: handle.events.last_sequence(),
        active_set: session.active_set().cloned(),
        answered: session.answered().iter().map(|a| a.text.clone()).collect(),
    }))
}

pub(super) async fn end_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    match state.shared.sessions.write().remove(&id) {
        Some(_) => Ok(StatusCode::NO_CONTENT),
        None => Err(ApiError::new(StatusCode::NOT_FOUND, "unknown_session", format!("no session {id}"))),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct TurnBody {
    speaker: String,
    text: String,
    #[serde(default)]
    timestamp_ms: Option<i64>,
}

#[derive(Serialize)]
pub(super) struct TurnAccepted {
    turn_index: usize,
    /// A suggestion round was scheduled; its set arrives as an event.
    triggered: bool,
}

pub(super) async fn ingest_turn(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<TurnBody>,
) -> Result<(StatusCode, Json<TurnAccepted>), ApiError> {
    let handle = state.session(&id)?;
    let speaker: Speaker = body
        .speaker
        .parse()
        .map_err(|e: faqassist_core::ConversationError| ApiError::invalid(e.to_string()))?;
    let mut session = handle.session.lock().await;
    let turn_index = session.append_turn_at(speaker, &body.text, body.timestamp_ms)?.index;
    let triggered = state.shared.engine.should_trigger(&mut session, TriggerMode::Auto);
    drop(session);
    if triggered {
        state.schedule_round(handle);
    }
    Ok((StatusCode::ACCEPTED, Json(TurnAccepted { turn_index, triggered })))
}

pub(super) async fn manual_trigger(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SuggestionSet>, ApiError> {
    let handle = state.session(&id)?;
    let mut session = handle.session.lock().await;
    state.shared.engine.should_trigger(&mut session, TriggerMode::Manual);
    let set = state.shared.engine.suggest(&mut session).await?;
    state.publish_set(&handle, &set);
    Ok(Json(set))
}

#[derive(Debug, Deserialize)]
pub(super) struct EventsQuery {
    last_seq: Option<u64>,
}

enum Frame {
    Event(ApiEvent),
    Overrun(Overrun),
}

impl Frame {
    fn into_sse(self) -> Event {
        match self {
            Frame::Event(e) => Event::default()
                .id(e.sequence.to_string())
                .event(e.event_kind.as_str())
                .json_data(&e)
                .unwrap_or_default(),
            Frame::Overrun(o) => Event::default().event("overrun").json_data(o).unwrap_or_default(),
        }
    }
}

/// Server-sent events. Resumes after `?last_seq=` or `Last-Event-ID`;
/// without either only new events are delivered. A resume point older than
/// the replay buffer is answered with 409, and a subscriber that falls
/// behind mid-stream gets an `overrun` event before the stream closes.
pub(super) async fn stream_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(query): Query<EventsQuery>,
    headers: HeaderMap,
) -> Result<Sse<impl Stream<Item = Result<Event, Infallible>>>, ApiError> {
    let handle = state.session(&id)?;
    let after = match query.last_seq {
        Some(n) => Some(n),
        None => match headers.get("last-event-id") {
            Some(v) => Some(
                v.to_str()
                    .ok()
                    .and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| ApiError::invalid("Last-Event-ID must be a sequence number"))?,
            ),
            None => None,
        },
    };
    let sub = handle.events.subscribe(after).map_err(|o| {
        let mut err = ApiError::new(StatusCode::CONFLICT, "buffer_overrun", o.to_string());
        err.detail = serde_json::to_value(o).ok();
        err
    })?;
    drop(handle);
    let last_seen = sub
        .replay
        .last()
        .map(|e| e.sequence)
        .or(after)
        .unwrap_or_else(|| state.session(&id).map_or(0, |h| h.events.last_sequence()));
    let replay = stream::iter(sub.replay.into_iter().map(Frame::Event));
    let live = stream::unfold(Some((sub.live, last_seen)), |st| async move {
        let (mut rx, last_seen) = st?;
        match rx.recv().await {
            Ok(e) => {
                let seq = e.sequence;
                Some((Frame::Event(e), Some((rx, seq))))
            }
            Err(RecvError::Lagged(_)) => Some((
                Frame::Overrun(Overrun {
                    last_seen,
                    oldest_available: last_seen + 1 + rx.len() as u64,
                }),
                None,
            )),
            Err(RecvError::Closed) => None,
        }
    });
    let frames = replay.chain(live).map(|f| Ok(f.into_sse()));
    Ok(Sse::new(frames).keep_alive(KeepAlive::default()))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct SelectBody {
    suggestion_id: String,
}

pub(super) async fn select_suggestion(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<SelectBody>,
) -> Result<Json<Answer>, ApiError> {
    let handle = state.session(&id)?;
    let mut session = handle.session.lock().await;
    let answer = state.shared.engine.select(&mut session, &body.suggestion_id).await?;
    state.publish(
        &handle,
        EventKind::Answer,
        serde_json::json!({ "suggestion_id": body.suggestion_id, "answer": answer }),
    );
    Ok(Json(answer))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct TagBody {
    suggestion_id: String,
    /// Overrides the answer the agent received.
    #[serde(default)]
    answer: Option<String>,
}

pub(super) async fn tag_faq(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(body): Json<TagBody>,
) -> Result<Json<TagOutcome>, ApiError> {
    let handle = state.session(&id)?;
    let session = handle.session.lock().await;
    let outcome = state
        .shared
        .engine
        .tag_as_faq(&session, &body.suggestion_id, body.answer.as_deref())
        .await;
    drop(session);
    let outcome = outcome?;
    state.publish(
        &handle,
        EventKind::FaqTagged,
        serde_json::json!({ "suggestion_id": body.suggestion_id, "qid": outcome.qid, "merged": outcome.merged }),
    );
    Ok(Json(outcome))
}

/// An FAQ entry without its embedding.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaqView {
    pub qid: String,
    pub question: String,
    pub answer: Option<String>,
    pub frequency: u64,
    pub source: Source,
    pub created_at: i64,
    pub updated_at: i64,
}

impl From<FaqEntry> for FaqView {
    fn from(e: FaqEntry) -> Self {
        Self {
            qid: e.qid,
            question: e.question,
            answer: e.answer,
            frequency: e.frequency,
            source: e.source,
            created_at: e.created_at,
            updated_at: e.updated_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaqList {
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub items: Vec<FaqView>,
}

#[derive(Debug, Deserialize)]
pub(super) struct ListQuery {
    #[serde(default)]
    offset: usize,
    limit: Option<usize>,
    #[serde(default)]
    answerless: bool,
}

pub(super) async fn list_faqs(State(state): State<AppState>, Query(q): Query<ListQuery>) -> Result<Json<FaqList>, ApiError> {
    let limit = q.limit.unwrap_or(DEFAULT_PAGE);
    if limit == 0 || limit > MAX_PAGE {
        return Err(ApiError::invalid(format!("limit must be between 1 and {MAX_PAGE}")));
    }
    let (total, items) = state.shared.engine.store().list(q.offset, limit, q.answerless);
    Ok(Json(FaqList {
        total,
        offset: q.offset,
        limit,
        items: items.into_iter().map(FaqView::from).collect(),
    }))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct CreateFaq {
    question: String,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    frequency: Option<u64>,
}

pub(super) async fn create_faq(
    State(state): State<AppState>,
    Json(body): Json<CreateFaq>,
) -> Result<(StatusCode, Json<FaqView>), ApiError> {
    let store = state.shared.engine.store();
    let qid = store
        .upsert(EntryFields {
            qid: None,
            question: body.question,
            answer: body.answer,
            frequency: body.frequency,
            source: Some(Source::Supervisor),
        })
        .await?;
    Ok((StatusCode::CREATED, Json(store.get(&qid)?.into())))
}

pub(super) async fn get_faq(State(state): State<AppState>, Path(qid): Path<String>) -> Result<Json<FaqView>, ApiError> {
    Ok(Json(state.shared.engine.store().get(&qid)?.into()))
}

/// Absent fields stay as they are; an empty `answer` clears it.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub(super) struct UpdateFaq {
    #[serde(default)]
    question: Option<String>,
    #[serde(default)]
    answer: Option<String>,
    #[serde(default)]
    frequency: Option<u64>,
}

pub(super) async fn update_faq(
    State(state): State<AppState>,
    Path(qid): Path<String>,
    Json(body): Json<UpdateFaq>,
) -> Result<Json<FaqView>, ApiError> {
    let store = state.shared.engine.store();
    let current = store.get(&qid)?;
    store
        .upsert(EntryFields {
            qid: Some(qid.clone()),
            question: body.question.unwrap_or(current.question),
            answer: body.answer,
            frequency: body.frequency,
            source: None,
        })
        .await?;
    Ok(Json(store.get(&qid)?.into()))
}

pub(super) async fn delete_faq(State(state): State<AppState>, Path(qid): Path<String>) -> Result<StatusCode, ApiError> {
    match state.shared.engine.store().remove(&qid)? {
        true => Ok(StatusCode::NO_CONTENT),
        false => Err(crate::store::StoreError::NotFound(qid).into()),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sessions_started: u64,
    pub sessions_open: u64,
    pub suggest_in_flight: u64,
    pub suggest_failures: u64,
    /// Suggestion sets produced by the engine.
    pub suggestion_sets: u64,
    /// Events pushed, by kind.
    pub events: std::collections::BTreeMap<String, u64>,
    pub faq_selections: u64,
    pub generated_selections: u64,
    pub rag_calls_made: u64,
    pub rag_calls_bypassed: u64,
    pub faq_entries: u64,
    pub engine: LedgerSnapshot,
}

pub(super) async fn metrics(State(state): State<AppState>) -> Json<MetricsReport> {
    let c = &state.shared.counters;
    let engine = state.shared.engine.ledger().snapshot();
    let rag = state.shared.engine.rag().counter();
    Json(MetricsReport {
        sessions_started: c.sessions_started.load(Ordering::SeqCst),
        sessions_open: state.session_count() as u64,
        suggest_in_flight: c.suggest_in_flight.load(Ordering::SeqCst),
        suggest_failures: c.suggest_failures.load(Ordering::SeqCst),
        suggestion_sets: engine.sets,
        events: EventKind::ALL
            .iter()
            .zip(&c.events)
            .map(|(k, n)| (k.as_str().to_string(), n.load(Ordering::SeqCst)))
            .collect(),
        faq_selections: engine.matched_selected,
        generated_selections: engine.generated_selected,
        rag_calls_made: rag.calls_made(),
        rag_calls_bypassed: rag.calls_bypassed(),
        faq_entries: state.shared.engine.store().len() as u64,
        engine,
    })
}

pub(super) async fn healthz() -> Json<serde_json::Value> {
    Json(serde_json::json!({ "status": "ok" }))
}
