use std::collections::HashMap;
use std::time::Duration;

use faqassist_core::conversation::{Conversation, ConversationError, Speaker, Turn};
use faqassist_core::trigger::RollingTrigger;
use faqassist_core::vector::Vector;
use serde::{Deserialize, Serialize};

use crate::embedding::EmbedError;
use crate::rag::RagError;
use crate::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchStrategy {
    /// Nearest FAQ questions by cosine, no model call.
    VectorOnly,
    /// A vector shortlist that the model narrows down.
    LlmRerank,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FanOut {
    Parallel,
    /// Match then generate, each with its own deadline. Baseline only.
    Serial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EngineConfig {
    pub window_size: usize,
    pub trigger_interval: usize,
    pub deadline_ms: u64,
    pub match_shortlist: usize,
    pub match_min_score: f64,
    pub dedup_threshold: f64,
    pub match_strategy: MatchStrategy,
    pub fan_out: FanOut,
    pub rag_deadline_ms: u64,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            window_size: faqassist_core::conversation::DEFAULT_WINDOW_SIZE,
            trigger_interval: faqassist_core::trigger::DEFAULT_TRIGGER_INTERVAL,
            deadline_ms: 2000,
            match_shortlist: 20,
            match_min_score: 0.55,
            dedup_threshold: faqassist_core::dedup::DEFAULT_DEDUP_THRESHOLD,
            match_strategy: MatchStrategy::LlmRerank,
            fan_out: FanOut::Parallel,
            rag_deadline_ms: 5000,
        }
    }
}

impl EngineConfig {
    pub fn deadline(&self) -> Duration {
        Duration::from_millis(self.deadline_ms)
    }

    pub fn rag_deadline(&self) -> Duration {
        Duration::from_millis(self.rag_deadline_ms)
    }

    pub fn validate(&self) -> Result<(), String> {
        let counts = [
            ("window_size", self.window_size as u64),
            ("trigger_interval", self.trigger_interval as u64),
            ("deadline_ms", self.deadline_ms),
            ("match_shortlist", self.match_shortlist as u64),
            ("rag_deadline_ms", self.rag_deadline_ms),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        for (name, v) in [("match_min_score", self.match_min_score), ("dedup_threshold", self.dedup_threshold)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(format!("{name} must be in (0, 1], got {v}"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SuggestionSource {
    Matched { qid: String, score: f64 },
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub suggestion_id: String,
    pub text: String,
    pub source: SuggestionSource,
    /// 1-based within its source.
    pub rank: usize,
}

impl Suggestion {
    pub fn is_matched(&self) -> bool {
        matches!(self.source, SuggestionSource::Matched { .. })
    }

    pub fn qid(&self) -> Option<&str> {
        match &self.source {
            SuggestionSource::Matched { qid, .. } => Some(qid),
            SuggestionSource::Generated => None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageReport {
    pub latency_ms: u64,
    pub degraded: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionSet {
    pub session_id: String,
    /// Per-session ordinal of this set, from 1.
    pub set_seq: u64,
    pub trigger_turn_index: usize,
    /// Matched first, then generated.
    pub suggestions: Vec<Suggestion>,
    /// Milliseconds since the epoch.
    pub produced_at: i64,
    pub matching: StageReport,
    pub generation: StageReport,
    pub degraded: bool,
}

impl SuggestionSet {
    pub fn matched(&self) -> impl Iterator<Item = &Suggestion> {
        self.suggestions.iter().filter(|s| s.is_matched())
    }

    pub fn generated(&self) -> impl Iterator<Item = &Suggestion> {
        self.suggestions.iter().filter(|s| !s.is_matched())
    }

    pub fn get(&self, suggestion_id: &str) -> Option<&Suggestion> {
        self.suggestions.iter().find(|s| s.suggestion_id == suggestion_id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnswerSource {
    Faq { qid: String },
    Rag,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Answer {
    pub text: String,
    pub source: AnswerSource,
    pub latency_ms: u64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_refs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnsweredQuestion {
    pub text: String,
    pub embedding: Vector,
}

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error("unknown suggestion {0}")]
    UnknownSuggestion(String),
    #[error("only generated suggestions can be tagged as FAQ")]
    NotGenerated,
    #[error("suggestion has not been answered yet")]
    NotYetAnswered,
    #[error("text is empty")]
    EmptyText,
    #[error(transparent)]
    Conversation(#[from] ConversationError),
    #[error(transparent)]
    Rag(#[from] RagError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone)]
pub(crate) struct ActiveSet {
    pub set: SuggestionSet,
    /// Parallel to `set.suggestions`.
    pub embeddings: Vec<Vector>,
}

#[derive(Debug, Clone)]
pub(crate) struct Resolved {
    pub suggestion: Suggestion,
    pub answer: Answer,
}

/// Per-call state. One owner mutates it at a time.
#[derive(Debug, Clone)]
pub struct Session {
    pub(crate) id: String,
    pub(crate) conversation: Conversation,
    pub(crate) answered: Vec<AnsweredQuestion>,
    pub(crate) trigger: RollingTrigger,
    pub(crate) active: Option<ActiveSet>,
    pub(crate) resolved: HashMap<String, Resolved>,
    pub(crate) sets_produced: u64,
    pub(crate) window_size: usize,
}

impl Session {
    pub fn new(id: impl Into<String>, config: &EngineConfig) -> Self {
        let id = id.into();
        Self {
            conversation: Conversation::new(id.clone()),
            id,
            answered: Vec::new(),
            trigger: RollingTrigger::new(config.trigger_interval),
            active: None,
            resolved: HashMap::new(),
            sets_produced: 0,
            window_size: config.window_size.max(1),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conversation
    }

    pub fn append_turn(&mut self, speaker: Speaker, text: &str) -> Result<&Turn, EngineError> {
        Ok(self.conversation.append_turn(speaker, text)?)
    }

    pub fn append_turn_at(&mut self, speaker: Speaker, text: &str, timestamp_ms: Option<i64>) -> Result<&Turn, EngineError> {
        Ok(self.conversation.append_turn_at(speaker, text, timestamp_ms)?)
    }

    pub fn answered(&self) -> &[AnsweredQuestion] {
        &self.answered
    }

    pub fn last_trigger_index(&self) -> Option<usize> {
        self.trigger.last_trigger()
    }

    pub fn active_set(&self) -> Option<&SuggestionSet> {
        self.active.as_ref().map(|a| &a.set)
    }

    pub fn sets_produced(&self) -> u64 {
        self.sets_produced
    }
}
