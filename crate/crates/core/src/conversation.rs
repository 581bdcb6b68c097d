//! Two-party conversation model and rolling windows over its turns.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

/// Default number of trailing turns a suggestion round looks at.
pub const DEFAULT_WINDOW_SIZE: usize = 6;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConversationError {
    #[error("turn text is empty")]
    EmptyText,
    #[error("transcript has no turns")]
    EmptyTranscript,
    #[error("window size must be at least 1")]
    ZeroWindow,
    #[error("unknown speaker label {0:?}")]
    UnknownSpeaker(String),
    #[error("duplicate turn index {0}")]
    DuplicateIndex(usize),
    #[error("turn indices must be contiguous from 0; missing {0}")]
    MissingIndex(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Speaker {
    Agent,
    Customer,
}

impl Speaker {
    pub fn as_str(self) -> &'static str {
        match self {
            Speaker::Agent => "agent",
            Speaker::Customer => "customer",
        }
    }
}

impl fmt::Display for Speaker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Speaker {
    type Err = ConversationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let label = s.trim();
        if label.eq_ignore_ascii_case("agent") {
            Ok(Speaker::Agent)
        } else if label.eq_ignore_ascii_case("customer") {
            Ok(Speaker::Customer)
        } else {
            Err(ConversationError::UnknownSpeaker(s.to_string()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Turn {
    pub index: usize,
    pub speaker: Speaker,
    pub text: String,
    /// Milliseconds since the epoch, when the source recorded it. Never used
    /// for ordering.
    pub timestamp_ms: Option<i64>,
}

impl Turn {
    pub fn new(index: usize, speaker: Speaker, text: impl Into<String>) -> Self {
        Self {
            index,
            speaker,
            text: text.into(),
            timestamp_ms: None,
        }
    }
}

/// A conversation whose turns are indexed `0..n` without gaps.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Conversation {
    id: String,
    turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            turns: Vec::new(),
        }
    }

    /// Builds a conversation from turns in any order, validating the index
    /// invariants. An empty turn list is rejected.
    pub fn from_turns(id: impl Into<String>, mut turns: Vec<Turn>) -> Result<Self, ConversationError> {
        if turns.is_empty() {
            return Err(ConversationError::EmptyTranscript);
        }
        turns.sort_by_key(|t| t.index);
        for (expected, turn) in turns.iter().enumerate() {
            if turn.text.trim().is_empty() {
                return Err(ConversationError::EmptyText);
            }
            if turn.index < expected {
                return Err(ConversationError::DuplicateIndex(turn.index));
            }
            if turn.index > expected {
                return Err(ConversationError::MissingIndex(expected));
            }
        }
        Ok(Self { id: id.into(), turns })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn turns(&self) -> &[Turn] {
        &self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn last_index(&self) -> Option<usize> {
        self.turns.last().map(|t| t.index)
    }

    /// Appends a turn with the next index and returns it.
    pub fn append_turn(&mut self, speaker: Speaker, text: &str) -> Result<&Turn, ConversationError> {
        self.append_turn_at(speaker, text, None)
    }

    pub fn append_turn_at(&mut self, speaker: Speaker, text: &str, timestamp_ms: Option<i64>) -> Result<&Turn, ConversationError> {
        if text.trim().is_empty() {
            return Err(ConversationError::EmptyText);
        }
        let index = self.last_index().map_or(0, |i| i + 1);
        self.turns.push(Turn {
            index,
            speaker,
            text: text.to_string(),
            timestamp_ms,
        });
        Ok(&self.turns[index])
    }

    /// The last `min(size, n)` turns.
    pub fn window(&self, size: usize) -> Result<TurnWindow<'_>, ConversationError> {
        if size == 0 {
            return Err(ConversationError::ZeroWindow);
        }
        let start = self.turns.len().saturating_sub(size);
        Ok(TurnWindow {
            turns: &self.turns[start..],
        })
    }
}

/// A contiguous suffix of a conversation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TurnWindow<'a> {
    turns: &'a [Turn],
}

impl<'a> TurnWindow<'a> {
    pub fn turns(&self) -> &'a [Turn] {
        self.turns
    }

    pub fn len(&self) -> usize {
        self.turns.len()
    }

    pub fn is_empty(&self) -> bool {
        self.turns.is_empty()
    }

    pub fn start_index(&self) -> Option<usize> {
        self.turns.first().map(|t| t.index)
    }

    pub fn end_index(&self) -> Option<usize> {
        self.turns.last().map(|t| t.index)
    }

    /// One `speaker: text` line per turn, the layout prompt templates expect.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for (i, turn) in self.turns.iter().enumerate() {
            if i > 0 {
                out.push('\n');
            }
            out.push_str(turn.speaker.as_str());
            out.push_str(": ");
            out.push_str(turn.text.trim());
        }
        out
    }
}
