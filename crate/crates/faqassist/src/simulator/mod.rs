//! Offline replay harness: feeds recorded or synthetic calls through the
//! engine turn by turn, picks suggestions with a selection policy, and
//! aggregates counts and latencies across repetitions.

mod report;

#[cfg(test)]
mod tests;

use std::sync::Arc;
use std::time::Duration;

use faqassist_core::conversation::Conversation;
use faqassist_core::trigger::TriggerMode;
use futures::stream::{self, StreamExt};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

pub use report::{emit_report, render_csv, render_table, ReportFormat, CSV_HEADER};

use crate::embedding::DeterministicEmbedder;
use crate::engine::{Engine, EngineConfig, FanOut, LatencySnapshot, MatchStrategy, SuggestionSet};
use crate::llm::scripted::ScriptedBehavior;
use crate::llm::{LlmGateway, RoleTag};
use crate::rag::{RagClient, ScriptedRag};
use crate::store::StoreError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum SelectionRule {
    AlwaysFirstMatched,
    AlwaysFirstGenerated,
    PreferMatchedElseGenerated,
    /// Uniform over the set's suggestions.
    Random {
        seed: u64,
    },
    None,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum TriggerPlan {
    /// The engine's rolling cadence.
    Auto,
    EveryKTurns {
        k: usize,
    },
    /// Manual requests after the listed turn indices.
    ManualAt {
        indices: Vec<usize>,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayPolicy {
    pub selection: SelectionRule,
    pub trigger: TriggerPlan,
}

impl ReplayPolicy {
    pub fn new(selection: SelectionRule) -> Self {
        Self {
            selection,
            trigger: TriggerPlan::Auto,
        }
    }

    pub fn with_trigger(mut self, trigger: TriggerPlan) -> Self {
        self.trigger = trigger;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayOptions {
    /// Runs in flight at once.
    pub parallelism: usize,
}

impl Default for ReplayOptions {
    fn default() -> Self {
        Self { parallelism: 1 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReplayMetrics {
    pub runs: u64,
    pub suggestion_sets: u64,
    pub matched_suggested: u64,
    pub generated_suggested: u64,
    pub matched_selected: u64,
    pub generated_selected: u64,
    /// Matched selections whose entry had no stored answer.
    pub answerless_matched_selected: u64,
    pub answer_failures: u64,
    pub rag_calls_made: u64,
    pub rag_calls_bypassed: u64,
    pub end_to_end: LatencySnapshot,
    pub matching: LatencySnapshot,
    pub generation: LatencySnapshot,
    pub degraded: u64,
}

impl ReplayMetrics {
    pub fn selections(&self) -> u64 {
        self.matched_selected + self.generated_selected
    }

    /// Every RAG call is accounted for by a generated or answerless-matched
    /// selection.
    pub fn reconciles(&self) -> bool {
        self.rag_calls_made == self.generated_selected + self.answerless_matched_selected
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("repetitions must be at least 1")]
    NoRepetitions,
    #[error("every_k_turns needs k >= 1")]
    ZeroInterval,
    #[error("compare needs at least two profiles")]
    TooFewProfiles,
    #[error("profile label {0:?} is used twice")]
    DuplicateLabel(String),
    #[error("invalid engine config: {0}")]
    Config(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Counts and raw latency samples from one run.
#[derive(Debug, Default)]
struct RunOutcome {
    sets: u64,
    matched_suggested: u64,
    generated_suggested: u64,
    matched_selected: u64,
    generated_selected: u64,
    answerless_matched_selected: u64,
    answer_failures: u64,
    rag_calls_made: u64,
    rag_calls_bypassed: u64,
    degraded: u64,
    end_to_end_ms: Vec<u64>,
    matching_ms: Vec<u64>,
    generation_ms: Vec<u64>,
}

fn pick(set: &SuggestionSet, rule: SelectionRule, rng: &mut ChaCha8Rng) -> Option<String> {
    let first_matched = || set.matched().next();
    let first_generated = || set.generated().next();
    let chosen = match rule {
        SelectionRule::AlwaysFirstMatched => first_matched(),
        SelectionRule::AlwaysFirstGenerated => first_generated(),
        SelectionRule::PreferMatchedElseGenerated => first_matched().or_else(first_generated),
        SelectionRule::Random { .. } if set.suggestions.is_empty() => None,
        SelectionRule::Random { .. } => Some(&set.suggestions[rng.random_range(0..set.suggestions.len())]),
        SelectionRule::None => None,
    };
    chosen.map(|s| s.suggestion_id.clone())
}

/// Seed for one run, independent of run order.
fn run_seed(base: u64, transcript: usize, repetition: usize) -> u64 {
    base ^ (transcript as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (repetition as u64).wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

async fn run_once(base: &Engine, call: &Conversation, policy: &ReplayPolicy, seed: u64) -> RunOutcome {
    let engine = base.fork();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut session = engine.new_session(call.id());
    let mut out = RunOutcome::default();
    for turn in call.turns() {
        if session.append_turn_at(turn.speaker, &turn.text, turn.timestamp_ms).is_err() {
            continue;
        }
        let index = turn.index;
        let fire = match &policy.trigger {
            TriggerPlan::Auto => engine.should_trigger(&mut session, TriggerMode::Auto),
            TriggerPlan::EveryKTurns { k } => (index + 1) % k == 0,
            TriggerPlan::ManualAt { indices } => indices.contains(&index),
        };
        if !fire {
            continue;
        }
        let start = Instant::now();
        let Ok(set) = engine.suggest(&mut session).await else { continue };
        out.end_to_end_ms.push(start.elapsed().as_millis() as u64);
        out.matching_ms.push(set.matching.latency_ms);
        out.generation_ms.push(set.generation.latency_ms);
        if let Some(id) = pick(&set, policy.selection, &mut rng) {
            // Failures are already counted by the engine ledger.
            let _ = engine.select(&mut session, &id).await;
        }
    }
    let ledger = engine.ledger().snapshot();
    out.sets = ledger.sets;
    out.matched_suggested = ledger.matched_suggested;
    out.generated_suggested = ledger.generated_suggested;
    out.matched_selected = ledger.matched_selected;
    out.generated_selected = ledger.generated_selected;
    out.answerless_matched_selected = ledger.answerless_matched_selected;
    out.answer_failures = ledger.answer_failures;
    out.degraded = ledger.degraded_sets;
    out.rag_calls_made = engine.rag().counter().calls_made();
    out.rag_calls_bypassed = engine.rag().counter().calls_bypassed();
    out
}

fn aggregate(outcomes: Vec<RunOutcome>) -> ReplayMetrics {
    let mut m = ReplayMetrics {
        runs: outcomes.len() as u64,
        ..Default::default()
    };
    let (mut e2e, mut matching, mut generation) = (Vec::new(), Vec::new(), Vec::new());
    for o in outcomes {
        m.suggestion_sets += o.sets;
        m.matched_suggested += o.matched_suggested;
        m.generated_suggested += o.generated_suggested;
        m.matched_selected += o.matched_selected;
        m.generated_selected += o.generated_selected;
        m.answerless_matched_selected += o.answerless_matched_selected;
        m.answer_failures += o.answer_failures;
        m.rag_calls_made += o.rag_calls_made;
        m.rag_calls_bypassed += o.rag_calls_bypassed;
        m.degraded += o.degraded;
        e2e.extend(o.end_to_end_ms);
        matching.extend(o.matching_ms);
        generation.extend(o.generation_ms);
    }
    m.end_to_end = LatencySnapshot::of(&e2e);
    m.matching = LatencySnapshot::of(&matching);
    m.generation = LatencySnapshot::of(&generation);
    m
}

/// Replays every transcript `repetitions` times. Each run gets its own
/// engine fork, so runs never see each other's answers or tags. Latencies
/// are measured on the tokio clock; under a paused runtime (see
/// [`replay_virtual`]) they reflect injected latencies only.
pub async fn replay(
    engine: &Engine,
    transcripts: &[Conversation],
    policy: &ReplayPolicy,
    repetitions: usize,
    options: ReplayOptions,
) -> Result<ReplayMetrics, SimError> {
    if repetitions == 0 {
        return Err(SimError::NoRepetitions);
    }
    if matches!(policy.trigger, TriggerPlan::EveryKTurns { k: 0 }) {
        return Err(SimError::ZeroInterval);
    }
    let base_seed = match policy.selection {
        SelectionRule::Random { seed } => seed,
        _ => 0,
    };
    let jobs = transcripts
        .iter()
        .enumerate()
        .flat_map(|(t, call)| (0..repetitions).map(move |r| (call, run_seed(base_seed, t, r))));
    let outcomes: Vec<RunOutcome> = stream::iter(jobs)
        .map(|(call, seed)| run_once(engine, call, policy, seed))
        .buffer_unordered(options.parallelism.max(1))
        .collect()
        .await;
    Ok(aggregate(outcomes))
}

/// [`replay`] on a fresh single-threaded runtime with a paused clock, so
/// reported latencies are exactly the injected ones and reruns are
/// byte-identical. Only scripted providers make sense here.
pub fn replay_virtual(
    engine: &Engine,
    transcripts: &[Conversation],
    policy: &ReplayPolicy,
    repetitions: usize,
    options: ReplayOptions,
) -> Result<ReplayMetrics, SimError> {
    paused_runtime().block_on(replay(engine, transcripts, policy, repetitions, options))
}

fn paused_runtime() -> tokio::runtime::Runtime {
    tokio::runtime::Builder::new_current_thread()
        .enable_time()
        .start_paused(true)
        .build()
        .expect("current-thread runtime")
}

/// One implementation approach to compare: how matching works, whether the
/// stages overlap, and the latencies injected into each provider.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StrategyProfile {
    pub label: String,
    pub match_strategy: MatchStrategy,
    #[serde(default = "parallel")]
    pub fan_out: FanOut,
    /// Applied to both the match and generate roles.
    #[serde(default)]
    pub llm_latency_ms: u64,
    #[serde(default)]
    pub embedder_latency_ms: u64,
    #[serde(default)]
    pub rag_latency_ms: u64,
    /// Overrides the engine's per-round deadline.
    #[serde(default)]
    pub deadline_ms: Option<u64>,
}

fn parallel() -> FanOut {
    FanOut::Parallel
}

impl StrategyProfile {
    pub fn new(label: impl Into<String>, match_strategy: MatchStrategy) -> Self {
        Self {
            label: label.into(),
            match_strategy,
            fan_out: FanOut::Parallel,
            llm_latency_ms: 0,
            embedder_latency_ms: 0,
            rag_latency_ms: 0,
            deadline_ms: None,
        }
    }

    /// The engine `base` would be under this profile: same FAQ entries and
    /// prompts, offline providers with the injected latencies.
    pub fn engine(&self, base: &Engine, embedder_seed: u64) -> Result<Engine, SimError> {
        let config = EngineConfig {
            match_strategy: self.match_strategy,
            fan_out: self.fan_out,
            deadline_ms: self.deadline_ms.unwrap_or(base.config().deadline_ms),
            ..base.config().clone()
        };
        config.validate().map_err(SimError::Config)?;
        let dim = base.store().config().dim;
        let embedder = DeterministicEmbedder::new(dim, embedder_seed).with_latency(Duration::from_millis(self.embedder_latency_ms));
        let store = base.store().fork_with_embedder(Arc::new(embedder))?;
        let llm = Duration::from_millis(self.llm_latency_ms);
        let behavior = ScriptedBehavior::offline()
            .with_role_latency(RoleTag::Match, llm)
            .with_role_latency(RoleTag::Generate, llm);
        let rag = RagClient::scripted(ScriptedRag::default().with_latency(Duration::from_millis(self.rag_latency_ms)));
        Ok(Engine::new(config, Arc::new(store), Arc::new(LlmGateway::scripted(behavior)), rag).with_prompts(base.prompts().clone()))
    }
}

/// Per-profile metrics, in profile order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<(String, ReplayMetrics)>,
}

impl Comparison {
    pub fn get(&self, label: &str) -> Option<&ReplayMetrics> {
        self.rows.iter().find(|(l, _)| l == label).map(|(_, m)| m)
    }
}

/// Replays the same calls under each profile on virtual time.
pub fn compare_strategies(
    base: &Engine,
    embedder_seed: u64,
    transcripts: &[Conversation],
    profiles: &[StrategyProfile],
    policy: &ReplayPolicy,
    repetitions: usize,
) -> Result<Comparison, SimError> {
    if profiles.len() < 2 {
        return Err(SimError::TooFewProfiles);
    }
    for (i, p) in profiles.iter().enumerate() {
        if profiles[..i].iter().any(|q| q.label == p.label) {
            return Err(SimError::DuplicateLabel(p.label.clone()));
        }
    }
    let mut rows = Vec::with_capacity(profiles.len());
    for profile in profiles {
        let engine = profile.engine(base, embedder_seed)?;
        let metrics = replay_virtual(&engine, transcripts, policy, repetitions, ReplayOptions::default())?;
        rows.push((profile.label.clone(), metrics));
    }
    Ok(Comparison { rows })
}

/// Vector search alone, one large model doing both stages in turn, and two
/// small models in parallel.
pub fn reference_profiles() -> Vec<StrategyProfile> {
    vec![
        StrategyProfile::new("vector_only", MatchStrategy::VectorOnly),
        StrategyProfile {
            fan_out: FanOut::Serial,
            llm_latency_ms: 2500,
            deadline_ms: Some(3000),
            ..StrategyProfile::new("serial_large_model", MatchStrategy::LlmRerank)
        },
        StrategyProfile {
            llm_latency_ms: 1500,
            ..StrategyProfile::new("parallel_small_models", MatchStrategy::LlmRerank)
        },
    ]
}
