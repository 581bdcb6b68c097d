use std::sync::atomic::{AtomicU64, Ordering};

use faqassist_core::stats::LatencySummary;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::types::StageReport;

/// Running totals for one engine. Counters only go up.
#[derive(Debug, Default)]
pub struct EngineLedger {
    sets: AtomicU64,
    degraded_sets: AtomicU64,
    degraded_match: AtomicU64,
    degraded_generate: AtomicU64,
    matched_suggested: AtomicU64,
    generated_suggested: AtomicU64,
    matched_selected: AtomicU64,
    generated_selected: AtomicU64,
    answerless_matched_selected: AtomicU64,
    faq_answers: AtomicU64,
    rag_answers: AtomicU64,
    answer_failures: AtomicU64,
    tags: AtomicU64,
    suggest_latency_ms: Mutex<Vec<u64>>,
    match_latency_ms: Mutex<Vec<u64>>,
    generate_latency_ms: Mutex<Vec<u64>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerSnapshot {
    pub sets: u64,
    pub degraded_sets: u64,
    pub degraded_match: u64,
    pub degraded_generate: u64,
    pub matched_suggested: u64,
    pub generated_suggested: u64,
    pub matched_selected: u64,
    pub generated_selected: u64,
    /// Matched selections whose FAQ entry had no answer yet.
    pub answerless_matched_selected: u64,
    pub faq_answers: u64,
    pub rag_answers: u64,
    pub answer_failures: u64,
    pub tags: u64,
    pub suggest_latency: LatencySnapshot,
    pub match_latency: LatencySnapshot,
    pub generate_latency: LatencySnapshot,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatencySnapshot {
    pub count: u64,
    pub p50_ms: u64,
    pub p95_ms: u64,
    pub max_ms: u64,
}

impl LatencySnapshot {
    /// Nearest-rank percentiles over `samples`.
    pub fn of(samples: &[u64]) -> Self {
        let s = LatencySummary::from_samples(samples);
        Self {
            count: s.count as u64,
            p50_ms: s.p50,
            p95_ms: s.p95,
            max_ms: s.max,
        }
    }
}

fn bump(c: &AtomicU64) {
    c.fetch_add(1, Ordering::SeqCst);
}

impl EngineLedger {
    pub(crate) fn record_set(&self, matched: usize, generated: usize, matching: &StageReport, generation: &StageReport, wall_ms: u64) {
        let (degraded_match, degraded_generate) = (matching.degraded, generation.degraded);
        bump(&self.sets);
        if degraded_match || degraded_generate {
            bump(&self.degraded_sets);
        }
        if degraded_match {
            bump(&self.degraded_match);
        }
        if degraded_generate {
            bump(&self.degraded_generate);
        }
        self.matched_suggested.fetch_add(matched as u64, Ordering::SeqCst);
        self.generated_suggested.fetch_add(generated as u64, Ordering::SeqCst);
        self.suggest_latency_ms.lock().push(wall_ms);
        self.match_latency_ms.lock().push(matching.latency_ms);
        self.generate_latency_ms.lock().push(generation.latency_ms);
    }

    pub(crate) fn record_selection(&self, matched: bool, answerless: bool) {
        match (matched, answerless) {
            (true, false) => bump(&self.matched_selected),
            (true, true) => {
                bump(&self.matched_selected);
                bump(&self.answerless_matched_selected);
            }
            (false, _) => bump(&self.generated_selected),
        }
    }

    pub(crate) fn record_answer(&self, from_faq: bool) {
        bump(if from_faq { &self.faq_answers } else { &self.rag_answers });
    }

    pub(crate) fn record_answer_failure(&self) {
        bump(&self.answer_failures);
    }

    pub(crate) fn record_tag(&self) {
        bump(&self.tags);
    }

    pub fn snapshot(&self) -> LedgerSnapshot {
        let get = |c: &AtomicU64| c.load(Ordering::SeqCst);
        LedgerSnapshot {
            sets: get(&self.sets),
            degraded_sets: get(&self.degraded_sets),
            degraded_match: get(&self.degraded_match),
            degraded_generate: get(&self.degraded_generate),
            matched_suggested: get(&self.matched_suggested),
            generated_suggested: get(&self.generated_suggested),
            matched_selected: get(&self.matched_selected),
            generated_selected: get(&self.generated_selected),
            answerless_matched_selected: get(&self.answerless_matched_selected),
            faq_answers: get(&self.faq_answers),
            rag_answers: get(&self.rag_answers),
            answer_failures: get(&self.answer_failures),
            tags: get(&self.tags),
            suggest_latency: LatencySnapshot::of(&self.suggest_latency_ms.lock()),
            match_latency: LatencySnapshot::of(&self.match_latency_ms.lock()),
            generate_latency: LatencySnapshot::of(&self.generate_latency_ms.lock()),
        }
    }

    /// Raw suggest wall times in recording order.
    pub fn suggest_latencies_ms(&self) -> Vec<u64> {
        self.suggest_latency_ms.lock().clone()
    }
}
