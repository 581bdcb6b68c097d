//! Rolling-window trigger: decides when a suggestion round runs.

/// Default number of turns between automatic rounds.
pub const DEFAULT_TRIGGER_INTERVAL: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TriggerMode {
    /// Fired by the rolling-window cadence.
    Auto,
    /// Fired by the agent asking for help.
    Manual,
}

/// Trigger bookkeeping for one session.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RollingTrigger {
    interval: usize,
    last: Option<usize>,
}

impl RollingTrigger {
    pub fn new(interval: usize) -> Self {
        Self {
            interval: interval.max(1),
            last: None,
        }
    }

    pub fn interval(&self) -> usize {
        self.interval
    }

    pub fn last_trigger(&self) -> Option<usize> {
        self.last
    }

    /// Whether a round is due at `last_turn` without claiming it.
    pub fn is_due(&self, last_turn: usize, mode: TriggerMode) -> bool {
        match mode {
            TriggerMode::Manual => true,
            TriggerMode::Auto => match self.last {
                Some(prev) => last_turn.saturating_sub(prev) >= self.interval,
                None => last_turn + 1 >= self.interval,
            },
        }
    }

    /// Checks and, when due, records `last_turn` as the trigger point so the
    /// same turn cannot fire twice.
    pub fn poll(&mut self, last_turn: usize, mode: TriggerMode) -> bool {
        let due = self.is_due(last_turn, mode);
        if due {
            self.mark(last_turn);
        }
        due
    }

    pub fn mark(&mut self, last_turn: usize) {
        self.last = Some(last_turn);
    }
}
