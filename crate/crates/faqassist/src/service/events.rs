//! Per-session event log: gapless sequence numbers, a bounded replay buffer
//! and live fan-out to any number of subscribers.

use std::collections::VecDeque;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

/// Events kept for reconnecting subscribers.
pub const REPLAY_BUFFER: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    SuggestionSet,
    Answer,
    FaqTagged,
    DegradedNotice,
}

impl EventKind {
    pub const ALL: [EventKind; 4] = [
        EventKind::SuggestionSet,
        EventKind::Answer,
        EventKind::FaqTagged,
        EventKind::DegradedNotice,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EventKind::SuggestionSet => "suggestion_set",
            EventKind::Answer => "answer",
            EventKind::FaqTagged => "faq_tagged",
            EventKind::DegradedNotice => "degraded_notice",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiEvent {
    pub sequence: u64,
    pub event_kind: EventKind,
    pub session_id: String,
    pub payload: serde_json::Value,
}

/// The subscriber fell further behind than the replay buffer reaches and
/// must refetch session state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, thiserror::Error)]
#[error("events after {last_seen} are no longer buffered (oldest is {oldest_available})")]
pub struct Overrun {
    pub last_seen: u64,
    pub oldest_available: u64,
}

pub struct Subscription {
    /// Buffered events after the resume point, in order.
    pub replay: Vec<ApiEvent>,
    /// Everything published after `replay`.
    pub live: broadcast::Receiver<ApiEvent>,
}

struct Inner {
    next: u64,
    buffer: VecDeque<ApiEvent>,
}

pub struct EventLog {
    session_id: String,
    inner: Mutex<Inner>,
    tx: broadcast::Sender<ApiEvent>,
}

impl EventLog {
    pub fn new(session_id: impl Into<String>) -> Self {
        let (tx, _) = broadcast::channel(REPLAY_BUFFER);
        Self {
            session_id: session_id.into(),
            inner: Mutex::new(Inner {
                next: 1,
                buffer: VecDeque::with_capacity(REPLAY_BUFFER),
            }),
            tx,
        }
    }

    /// Assigns the next sequence number and delivers the event.
    pub fn publish(&self, event_kind: EventKind, payload: serde_json::Value) -> ApiEvent {
        let mut inner = self.inner.lock();
        let event = ApiEvent {
            sequence: inner.next,
            event_kind,
            session_id: self.session_id.clone(),
            payload,
        };
        inner.next += 1;
        if inner.buffer.len() == REPLAY_BUFFER {
            inner.buffer.pop_front();
        }
        inner.buffer.push_back(event.clone());
        // Sending under the lock keeps replay and live streams disjoint.
        let _ = self.tx.send(event.clone());
        event
    }

    /// Sequence of the newest event, 0 before any.
    pub fn last_sequence(&self) -> u64 {
        self.inner.lock().next - 1
    }

    /// Live-only without `after`; otherwise replays every buffered event
    /// with a larger sequence first.
    pub fn subscribe(&self, after: Option<u64>) -> Result<Subscription, Overrun> {
        let inner = self.inner.lock();
        let live = self.tx.subscribe();
        let replay = match after {
            None => Vec::new(),
            Some(last_seen) => {
                let oldest_available = inner.buffer.front().map_or(inner.next, |e| e.sequence);
                if last_seen + 1 < oldest_available {
                    return Err(Overrun {
                        last_seen,
                        oldest_available,
                    });
                }
                inner.buffer.iter().filter(|e| e.sequence > last_seen).cloned().collect()
            }
        };
        Ok(Subscription { replay, live })
    }
}
