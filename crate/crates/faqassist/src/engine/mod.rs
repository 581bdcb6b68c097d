//! Live suggestion rounds for one call: rolling trigger, concurrent match
//! and generate stages under a deadline, merging into at most six
//! questions, answer routing, and runtime FAQ tagging.

mod ledger;
mod types;

use std::collections::HashMap;
use std::future::Future;
use std::sync::Arc;

use faqassist_core::conversation::TurnWindow;
use faqassist_core::dedup::{greedy_keep, near_any};
use faqassist_core::list_output::split_ids;
use faqassist_core::trigger::TriggerMode;
use faqassist_core::vector::Vector;
use tokio::time::Instant;

pub use ledger::{EngineLedger, LatencySnapshot, LedgerSnapshot};
use types::{ActiveSet, Resolved};
pub use types::{
    Answer, AnswerSource, AnsweredQuestion, EngineConfig, EngineError, FanOut, MatchStrategy, Session, StageReport, Suggestion,
    SuggestionSet, SuggestionSource,
};

use crate::llm::{CompletionRequest, LlmGateway, PromptSet, RoleTag};
use crate::rag::{RagClient, RagRequest};
use crate::store::{FaqEntry, FaqStore, TagOutcome};

/// Suggestions contributed by each stage.
pub const PER_STAGE: usize = 3;

/// A stage result before ids and ranks are assigned.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub source: SuggestionSource,
    pub embedding: Vector,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageOutput {
    pub candidates: Vec<Candidate>,
    pub report: StageReport,
}

pub struct Engine {
    config: EngineConfig,
    store: Arc<FaqStore>,
    gateway: Arc<LlmGateway>,
    rag: RagClient,
    prompts: Arc<PromptSet>,
    ledger: Arc<EngineLedger>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).finish_non_exhaustive()
    }
}

fn render_answered(answered: &[AnsweredQuestion]) -> String {
    if answered.is_empty() {
        return "(none)".into();
    }
    answered.iter().map(|a| format!("- {}", a.text)).collect::<Vec<_>>().join("\n")
}

async fn run_stage<F>(deadline: Instant, work: F) -> StageOutput
where
    F: Future<Output = Result<Vec<Candidate>, String>>,
{
    let start = Instant::now();
    let result = tokio::time::timeout_at(deadline, work).await;
    let latency_ms = start.elapsed().as_millis() as u64;
    let (candidates, error) = match result {
        Ok(Ok(c)) => (c, None),
        Ok(Err(e)) => (Vec::new(), Some(e)),
        Err(_) => (Vec::new(), Some("deadline exceeded".to_string())),
    };
    StageOutput {
        candidates,
        report: StageReport {
            latency_ms,
            degraded: error.is_some(),
            error,
        },
    }
}

fn remaining(deadline: Instant) -> Result<std::time::Duration, String> {
    let left = deadline.saturating_duration_since(Instant::now());
    if left.is_zero() {
        Err("deadline exceeded".into())
    } else {
        Ok(left)
    }
}

impl Engine {
    pub fn new(config: EngineConfig, store: Arc<FaqStore>, gateway: Arc<LlmGateway>, rag: RagClient) -> Self {
        Self {
            config,
            store,
            gateway,
            rag,
            prompts: Arc::new(PromptSet::builtin()),
            ledger: Arc::default(),
        }
    }

    pub fn with_prompts(mut self, prompts: Arc<PromptSet>) -> Self {
        self.prompts = prompts;
        self
    }

    /// Independent copy for replays: forked store, zeroed RAG counter and
    /// ledger, shared gateway and prompts.
    pub fn fork(&self) -> Self {
        Self {
            config: self.config.clone(),
            store: Arc::new(self.store.fork()),
            gateway: self.gateway.clone(),
            rag: self.rag.with_fresh_counter(),
            prompts: self.prompts.clone(),
            ledger: Arc::default(),
        }
    }

    pub fn prompts(&self) -> &Arc<PromptSet> {
        &self.prompts
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn store(&self) -> &Arc<FaqStore> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<LlmGateway> {
        &self.gateway
    }

    pub fn rag(&self) -> &RagClient {
        &self.rag
    }

    pub fn ledger(&self) -> &Arc<EngineLedger> {
        &self.ledger
    }

    pub fn new_session(&self, id: impl Into<String>) -> Session {
        Session::new(id, &self.config)
    }

    /// Manual always fires. Auto fires on the rolling cadence and claims the
    /// trigger point, so a second check without new turns is false.
    pub fn should_trigger(&self, session: &mut Session, mode: TriggerMode) -> bool {
        match session.conversation.last_index() {
            Some(last) => session.trigger.poll(last, mode),
            None => false,
        }
    }

    /// Up to three FAQ entries relevant to the window, none close to an
    /// answered question. Failures and timeouts degrade to empty.
    pub async fn match_stage(&self, window: &TurnWindow<'_>, answered: &[AnsweredQuestion]) -> StageOutput {
        let deadline = Instant::now() + self.config.deadline();
        run_stage(deadline, self.match_candidates(window, answered, deadline)).await
    }

    /// Up to three new questions written by the model from the window.
    pub async fn generate_stage(&self, window: &TurnWindow<'_>, answered: &[AnsweredQuestion]) -> StageOutput {
        let deadline = Instant::now() + self.config.deadline();
        run_stage(deadline, self.generate_candidates(window, answered, deadline)).await
    }

    async fn match_candidates(
        &self,
        window: &TurnWindow<'_>,
        answered: &[AnsweredQuestion],
        deadline: Instant,
    ) -> Result<Vec<Candidate>, String> {
        if self.store.is_empty() {
            return Ok(Vec::new());
        }
        let texts: Vec<String> = window
            .turns()
            .iter()
            .map(|t| t.text.trim().to_string())
            .filter(|t| !t.is_empty())
            .collect();
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = self.store.embedder().embed_batch(&texts).await.map_err(|e| e.to_string())?;

        let threshold = self.config.dedup_threshold;
        let keep = |e: &FaqEntry| !near_any(&e.embedding, answered.iter().map(|a| &a.embedding), threshold);
        let (k, min_score) = match self.config.match_strategy {
            MatchStrategy::VectorOnly => (PER_STAGE, self.config.match_min_score),
            MatchStrategy::LlmRerank => (self.config.match_shortlist, f64::NEG_INFINITY),
        };
        // An entry scores its best cosine against any single turn.
        let mut best: HashMap<String, (f64, String)> = HashMap::new();
        for v in &vectors {
            for m in self.store.search_where(v, k, min_score, keep).map_err(|e| e.to_string())? {
                let slot = best.entry(m.qid).or_insert((m.score, m.question));
                if m.score > slot.0 {
                    slot.0 = m.score;
                }
            }
        }
        let mut ranked: Vec<(String, f64, String)> = best.into_iter().map(|(qid, (s, q))| (qid, s, q)).collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(k);

        let picked = match self.config.match_strategy {
            MatchStrategy::VectorOnly => ranked.into_iter().take(PER_STAGE).collect::<Vec<_>>(),
            MatchStrategy::LlmRerank => self.rerank(window, answered, ranked, deadline).await?,
        };
        Ok(picked
            .into_iter()
            .filter_map(|(qid, score, question)| {
                // Entries removed since the search are skipped.
                let entry = self.store.get(&qid).ok()?;
                Some(Candidate {
                    text: question,
                    source: SuggestionSource::Matched { qid, score },
                    embedding: entry.embedding,
                })
            })
            .collect())
    }

    async fn rerank(
        &self,
        window: &TurnWindow<'_>,
        answered: &[AnsweredQuestion],
        shortlist: Vec<(String, f64, String)>,
        deadline: Instant,
    ) -> Result<Vec<(String, f64, String)>, String> {
        if shortlist.is_empty() {
            return Ok(Vec::new());
        }
        let candidates = shortlist
            .iter()
            .map(|(qid, _, q)| format!("[{qid}] {q}"))
            .collect::<Vec<_>>()
            .join("\n");
        let n = PER_STAGE.to_string();
        let prompt = self.prompts.render(
            RoleTag::Match,
            &[
                ("window", &window.render()),
                ("answered", &render_answered(answered)),
                ("candidates", &candidates),
                ("n", &n),
            ],
        );
        let req = CompletionRequest::new(RoleTag::Match, prompt).with_deadline(remaining(deadline)?);
        let items = self.gateway.complete_list(&req, PER_STAGE).await.map_err(|e| e.to_string())?;
        let mut picked: Vec<(String, f64, String)> = Vec::new();
        for item in &items {
            // Take the first token of the line naming a shortlisted qid.
            let hit = split_ids(item)
                .into_iter()
                .find_map(|id| shortlist.iter().find(|(qid, _, _)| qid == id));
            if let Some(c) = hit {
                if !picked.iter().any(|p| p.0 == c.0) {
                    picked.push(c.clone());
                }
            }
        }
        picked.truncate(PER_STAGE);
        Ok(picked)
    }

    async fn generate_candidates(
        &self,
        window: &TurnWindow<'_>,
        answered: &[AnsweredQuestion],
        deadline: Instant,
    ) -> Result<Vec<Candidate>, String> {
        let n = PER_STAGE.to_string();
        let prompt = self.prompts.render(
            RoleTag::Generate,
            &[("window", &window.render()), ("answered", &render_answered(answered)), ("n", &n)],
        );
        let req = CompletionRequest::new(RoleTag::Generate, prompt).with_deadline(remaining(deadline)?);
        let mut texts: Vec<String> = Vec::new();
        for item in self.gateway.complete_list(&req, PER_STAGE).await.map_err(|e| e.to_string())? {
            let t = item.trim().to_string();
            if !t.is_empty() && !texts.iter().any(|x| x.eq_ignore_ascii_case(&t)) {
                texts.push(t);
            }
        }
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let vectors = self.store.embedder().embed_batch(&texts).await.map_err(|e| e.to_string())?;
        let threshold = self.config.dedup_threshold;
        Ok(texts
            .into_iter()
            .zip(vectors)
            .filter(|(_, v)| !near_any(v, answered.iter().map(|a| &a.embedding), threshold))
            .map(|(text, embedding)| Candidate {
                text,
                source: SuggestionSource::Generated,
                embedding,
            })
            .collect())
    }

    /// Runs one suggestion round over the current window and makes it the
    /// active set. Stage failures shrink the set and flag it degraded.
    pub async fn suggest(&self, session: &mut Session) -> Result<SuggestionSet, EngineError> {
        let last = session
            .conversation
            .last_index()
            .ok_or(EngineError::Conversation(faqassist_core::ConversationError::EmptyTranscript))?;
        session.trigger.mark(last);
        let start = Instant::now();
        let (matching, generation) = {
            let window = session.conversation.window(session.window_size)?;
            let answered = &session.answered;
            match self.config.fan_out {
                FanOut::Parallel => {
                    let deadline = start + self.config.deadline();
                    tokio::join!(
                        run_stage(deadline, self.match_candidates(&window, answered, deadline)),
                        run_stage(deadline, self.generate_candidates(&window, answered, deadline)),
                    )
                }
                FanOut::Serial => {
                    let m = self.match_stage(&window, answered).await;
                    let g = self.generate_stage(&window, answered).await;
                    (m, g)
                }
            }
        };

        let threshold = self.config.dedup_threshold;
        let candidates: Vec<Candidate> = matching
            .candidates
            .into_iter()
            .filter(|c| c.source != SuggestionSource::Generated)
            .take(PER_STAGE)
            .chain(
                generation
                    .candidates
                    .into_iter()
                    .filter(|c| c.source == SuggestionSource::Generated)
                    .take(PER_STAGE),
            )
            .filter(|c| !near_any(&c.embedding, session.answered.iter().map(|a| &a.embedding), threshold))
            .collect();
        // Earlier candidates win, so matched beats generated on collision.
        let keep = greedy_keep(&candidates.iter().map(|c| &c.embedding).collect::<Vec<_>>(), threshold);

        let set_seq = session.sets_produced + 1;
        let mut suggestions = Vec::new();
        let mut embeddings = Vec::new();
        let (mut matched_rank, mut generated_rank) = (0, 0);
        for (c, kept) in candidates.into_iter().zip(keep) {
            if !kept {
                continue;
            }
            let rank = if matches!(c.source, SuggestionSource::Matched { .. }) {
                matched_rank += 1;
                matched_rank
            } else {
                generated_rank += 1;
                generated_rank
            };
            suggestions.push(Suggestion {
                suggestion_id: format!("{set_seq}.{}", suggestions.len() + 1),
                text: c.text,
                source: c.source,
                rank,
            });
            embeddings.push(c.embedding);
        }
        let wall_ms = start.elapsed().as_millis() as u64;
        let set = SuggestionSet {
            session_id: session.id.clone(),
            set_seq,
            trigger_turn_index: last,
            suggestions,
            produced_at: crate::store::now_ms(),
            degraded: matching.report.degraded || generation.report.degraded,
            matching: matching.report,
            generation: generation.report,
        };
        self.ledger
            .record_set(matched_rank, generated_rank, &set.matching, &set.generation, wall_ms);
        session.sets_produced = set_seq;
        session.active = Some(ActiveSet {
            set: set.clone(),
            embeddings,
        });
        Ok(set)
    }

    /// Resolves a suggestion of the active set to an answer. Matched entries
    /// with a stored answer never reach the RAG service; answerless ones get
    /// the RAG answer written back.
    pub async fn select(&self, session: &mut Session, suggestion_id: &str) -> Result<Answer, EngineError> {
        let active = session
            .active
            .as_ref()
            .ok_or_else(|| EngineError::UnknownSuggestion(suggestion_id.to_string()))?;
        let idx = active
            .set
            .suggestions
            .iter()
            .position(|s| s.suggestion_id == suggestion_id)
            .ok_or_else(|| EngineError::UnknownSuggestion(suggestion_id.to_string()))?;
        let suggestion = active.set.suggestions[idx].clone();
        let embedding = active.embeddings[idx].clone();
        let context = session.conversation.window(session.window_size)?.render();

        let start = Instant::now();
        let answer = match &suggestion.source {
            SuggestionSource::Matched { qid, .. } => {
                let stored = self.store.get(qid).ok().and_then(|e| e.answer);
                self.ledger.record_selection(true, stored.is_none());
                match stored {
                    Some(text) => {
                        self.rag.record_bypass();
                        Answer {
                            text,
                            source: AnswerSource::Faq { qid: qid.clone() },
                            latency_ms: start.elapsed().as_millis() as u64,
                            source_refs: Vec::new(),
                        }
                    }
                    None => {
                        let answer = self.ask_rag(&suggestion.text, context, start).await?;
                        if let Err(e) = self.store.set_answer(qid, &answer.text) {
                            tracing::warn!(%qid, error = %e, "could not store answer on FAQ entry");
                        }
                        answer
                    }
                }
            }
            SuggestionSource::Generated => {
                self.ledger.record_selection(false, false);
                self.ask_rag(&suggestion.text, context, start).await?
            }
        };
        self.ledger.record_answer(matches!(answer.source, AnswerSource::Faq { .. }));
        note_answered(session, suggestion.text.clone(), embedding, self.config.dedup_threshold);
        session.resolved.insert(
            suggestion_id.to_string(),
            Resolved {
                suggestion,
                answer: answer.clone(),
            },
        );
        Ok(answer)
    }

    async fn ask_rag(&self, question: &str, context: String, start: Instant) -> Result<Answer, EngineError> {
        let req = RagRequest::new(question)
            .with_context(context)
            .with_deadline(self.config.rag_deadline());
        match self.rag.retrieve(&req).await {
            Ok(a) => Ok(Answer {
                text: a.text,
                source: AnswerSource::Rag,
                latency_ms: start.elapsed().as_millis() as u64,
                source_refs: a.source_refs,
            }),
            Err(e) => {
                self.ledger.record_answer_failure();
                Err(e.into())
            }
        }
    }

    /// Saves an answered generated question to the FAQ store. `answer`
    /// overrides the text the agent received.
    pub async fn tag_as_faq(&self, session: &Session, suggestion_id: &str, answer: Option<&str>) -> Result<TagOutcome, EngineError> {
        let Some(resolved) = session.resolved.get(suggestion_id) else {
            let pending = session.active_set().and_then(|s| s.get(suggestion_id));
            return Err(match pending {
                Some(s) if s.is_matched() => EngineError::NotGenerated,
                Some(_) => EngineError::NotYetAnswered,
                None => EngineError::UnknownSuggestion(suggestion_id.to_string()),
            });
        };
        if resolved.suggestion.is_matched() {
            return Err(EngineError::NotGenerated);
        }
        let answer = answer.map(str::trim).filter(|a| !a.is_empty()).unwrap_or(&resolved.answer.text);
        let outcome = self.store.tag_runtime(&resolved.suggestion.text, answer).await?;
        self.ledger.record_tag();
        Ok(outcome)
    }

    /// Records a question as answered and prunes active suggestions close
    /// to it.
    pub async fn mark_answered(&self, session: &mut Session, question: &str) -> Result<(), EngineError> {
        let question = question.trim();
        if question.is_empty() {
            return Err(EngineError::EmptyText);
        }
        let embedding = self.store.embedder().embed(question).await?;
        note_answered(session, question.to_string(), embedding, self.config.dedup_threshold);
        Ok(())
    }
}

fn note_answered(session: &mut Session, text: String, embedding: Vector, threshold: f64) {
    if let Some(active) = session.active.as_mut() {
        let keep: Vec<bool> = active.embeddings.iter().map(|v| !near_any(v, [&embedding], threshold)).collect();
        let mut flags = keep.iter();
        active.set.suggestions.retain(|_| *flags.next().unwrap());
        let mut flags = keep.iter();
        active.embeddings.retain(|_| *flags.next().unwrap());
    }
    session.answered.push(AnsweredQuestion { text, embedding });
}
