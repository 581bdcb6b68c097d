use std::collections::BTreeMap;

use faqassist_core::conversation::{Conversation, Speaker, Turn};
use faqassist_core::kmeans::{kmeans, KMeansParams};
use faqassist_core::list_output::{leading_integer, split_ids};
use faqassist_core::representative::{apply_merge_groups, check_review, MergeGroup, Representative, Unlisted};
use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

use super::{ClusterAssignment, FilteredQuestion, MiningConfig, MiningError, RawQuestion};
use crate::embedding::Embedder;
use crate::llm::{CompletionRequest, LlmError, LlmGateway, PromptSet, RoleTag};
use crate::rag::{RagClient, RagRequest};
use crate::store::{EntryFields, FaqStore, Source};

const EMBED_BATCH: usize = 256;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractOutput {
    pub questions: Vec<RawQuestion>,
    pub calls: usize,
    pub failed_calls: usize,
    pub chunks: usize,
}

fn request(role: RoleTag, prompt: String, config: &MiningConfig) -> CompletionRequest {
    CompletionRequest::new(role, prompt).with_deadline(config.llm_deadline())
}

fn render_turn(t: &Turn) -> String {
    format!("{}: {}", t.speaker, t.text)
}

/// Splits a call into runs of turns whose rendering fits the prompt budget.
/// A single oversized turn still forms its own chunk.
fn chunk_turns(turns: &[Turn], budget: usize) -> Vec<&[Turn]> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut used = 0;
    for (i, t) in turns.iter().enumerate() {
        let len = render_turn(t).len() + 1;
        if i > start && used + len > budget {
            chunks.push(&turns[start..i]);
            start = i;
            used = 0;
        }
        used += len;
    }
    if start < turns.len() {
        chunks.push(&turns[start..]);
    }
    chunks
}

/// Index of the customer turn that most plausibly holds `question`.
fn locate(question: &str, chunk: &[Turn]) -> usize {
    let needle = question.trim().trim_end_matches('?').to_lowercase();
    let customer = || chunk.iter().filter(|t| t.speaker == Speaker::Customer);
    customer()
        .find(|t| t.text.to_lowercase().contains(&needle))
        .or_else(|| customer().next_back())
        .or_else(|| chunk.first())
        .map_or(0, |t| t.index)
}

async fn extract_call(
    call: &Conversation,
    gateway: &LlmGateway,
    prompts: &PromptSet,
    config: &MiningConfig,
) -> Result<(Vec<RawQuestion>, usize), LlmError> {
    let mut out = Vec::new();
    let chunks = chunk_turns(call.turns(), config.prompt_budget_chars);
    for chunk in &chunks {
        let transcript = chunk.iter().map(render_turn).collect::<Vec<_>>().join("\n");
        let prompt = prompts.render(RoleTag::Extract, &[("transcript", &transcript)]);
        let req = request(RoleTag::Extract, prompt, config);
        for q in gateway.complete_list(&req, config.max_questions_per_call).await? {
            let text = q.trim().to_string();
            if !text.is_empty() {
                out.push(RawQuestion {
                    turn_index: locate(&text, chunk),
                    text,
                    call_id: call.id().to_string(),
                });
            }
        }
    }
    Ok((out, chunks.len()))
}

/// One extraction per call (per chunk for long calls). Failed calls are
/// skipped; more than a fifth failing aborts.
pub async fn extract_questions(
    transcripts: &[Conversation],
    gateway: &LlmGateway,
    prompts: &PromptSet,
    config: &MiningConfig,
) -> Result<ExtractOutput, MiningError> {
    if transcripts.is_empty() {
        return Err(MiningError::NoTranscripts);
    }
    let results: Vec<_> = stream::iter(transcripts)
        .map(|call| async move { (call.id(), extract_call(call, gateway, prompts, config).await) })
        .buffered(config.concurrency.max(1))
        .collect()
        .await;
    let mut output = ExtractOutput {
        calls: transcripts.len(),
        ..Default::default()
    };
    for (call_id, r) in results {
        match r {
            Ok((qs, chunks)) => {
                output.questions.extend(qs);
                output.chunks += chunks;
            }
            Err(e) => {
                tracing::warn!(%call_id, error = %e, "question extraction failed for call");
                output.failed_calls += 1;
            }
        }
    }
    if output.failed_calls * 5 > output.calls {
        return Err(MiningError::TooManyFailures {
            failed: output.failed_calls,
            total: output.calls,
        });
    }
    Ok(output)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CriticOutput {
    pub kept: Vec<FilteredQuestion>,
    pub batches: usize,
    /// Batches kept whole because no verdict could be read.
    pub fail_open_batches: usize,
}

async fn critic_batch(batch: &[RawQuestion], gateway: &LlmGateway, prompts: &PromptSet, config: &MiningConfig) -> Option<Vec<bool>> {
    let lines = batch
        .iter()
        .enumerate()
        .map(|(i, q)| format!("[{}] {}", i + 1, q.text))
        .collect::<Vec<_>>()
        .join("\n");
    let req = request(RoleTag::Critic, prompts.render(RoleTag::Critic, &[("batch", &lines)]), config);
    // An unparseable verdict was already reprompted once by the gateway;
    // other failures get one more attempt.
    let mut retried = false;
    let items = loop {
        match gateway.complete_list(&req, batch.len()).await {
            Ok(items) => break items,
            Err(LlmError::Unparseable) => return None,
            Err(_) if !retried => retried = true,
            Err(_) => return None,
        }
    };
    let mut keep = vec![false; batch.len()];
    for item in &items {
        if let Some(n) = leading_integer(item).filter(|n| (1..=batch.len()).contains(n)) {
            keep[n - 1] = true;
        }
    }
    Some(keep)
}

/// Consecutive batches of `config.critic_batch`; each verdict lists the
/// ordinals to keep.
pub async fn critic_filter(raw: &[RawQuestion], gateway: &LlmGateway, prompts: &PromptSet, config: &MiningConfig) -> CriticOutput {
    let size = config.critic_batch.max(1);
    let batches: Vec<&[RawQuestion]> = raw.chunks(size).collect();
    let verdicts: Vec<_> = stream::iter(batches.iter())
        .map(|b| critic_batch(b, gateway, prompts, config))
        .buffered(config.concurrency.max(1))
        .collect()
        .await;
    let mut out = CriticOutput {
        batches: batches.len(),
        ..Default::default()
    };
    for (i, (batch, verdict)) in batches.iter().zip(verdicts).enumerate() {
        let keep = verdict.unwrap_or_else(|| {
            tracing::warn!(batch = i, "critic verdict unreadable; keeping the batch unfiltered");
            out.fail_open_batches += 1;
            vec![true; batch.len()]
        });
        out.kept
            .extend(batch.iter().zip(keep).filter(|(_, k)| *k).map(|(q, _)| FilteredQuestion {
                text: q.text.clone(),
                call_id: q.call_id.clone(),
            }));
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClusterOutput {
    pub clusters: Vec<ClusterAssignment>,
    pub k_requested: usize,
    pub k_used: usize,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each assignment step.
    pub trace: Vec<f64>,
}

/// Embeds and k-means clusters the filtered questions. `k` above the
/// question count is lowered to it.
pub async fn cluster_questions(
    filtered: &[FilteredQuestion],
    embedder: &dyn Embedder,
    config: &MiningConfig,
) -> Result<ClusterOutput, MiningError> {
    if filtered.is_empty() {
        return Ok(ClusterOutput {
            k_requested: config.k,
            ..Default::default()
        });
    }
    let texts: Vec<String> = filtered.iter().map(|q| q.text.clone()).collect();
    let mut vectors = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(EMBED_BATCH) {
        vectors.extend(embedder.embed_batch(chunk).await?);
    }
    let k = if config.k > filtered.len() {
        tracing::warn!(
            requested = config.k,
            questions = filtered.len(),
            "fewer questions than clusters; lowering k"
        );
        filtered.len()
    } else {
        config.k
    };
    let params = KMeansParams {
        k,
        max_iter: config.kmeans_max_iter,
        seed: config.kmeans_seed,
        n_init: config.kmeans_restarts.max(1),
    };
    let result = kmeans(&vectors, &params)?;
    let mut clusters: Vec<ClusterAssignment> = result
        .centroids
        .iter()
        .enumerate()
        .map(|(cluster_id, c)| ClusterAssignment {
            cluster_id,
            members: Vec::new(),
            centroid: c.clone(),
        })
        .collect();
    for (q, &a) in filtered.iter().zip(&result.assignments) {
        clusters[a].members.push(q.clone());
    }
    Ok(ClusterOutput {
        clusters,
        k_requested: config.k,
        k_used: k,
        objective: result.objective,
        iterations: result.iterations,
        converged: result.converged,
        trace: result.trace,
    })
}

/// Most frequent member text, lexicographically smallest on ties.
pub fn most_frequent_text<'a>(members: impl IntoIterator<Item = &'a str>) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for m in members {
        *counts.entry(m).or_default() += 1;
    }
    let mut best: Option<(&str, usize)> = None;
    for (m, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((m, c));
        }
    }
    best.map(|(m, _)| m.to_string())
}

/// Canonical phrasing for one cluster, with frequency = member count. The
/// boolean is true when the fallback was used.
pub async fn summarize_cluster(
    qid: String,
    members: &[FilteredQuestion],
    gateway: &LlmGateway,
    prompts: &PromptSet,
    config: &MiningConfig,
) -> (Representative, bool) {
    let listed = members.iter().map(|m| format!("- {}", m.text)).collect::<Vec<_>>().join("\n");
    let req = request(
        RoleTag::Summarize,
        prompts.render(RoleTag::Summarize, &[("members", &listed)]),
        config,
    );
    let from_model = match gateway.complete_list(&req, 1).await {
        Ok(items) => items.into_iter().next().map(|t| t.trim().to_string()).filter(|t| !t.is_empty()),
        Err(e) => {
            tracing::warn!(%qid, error = %e, "summary failed; using most frequent member");
            None
        }
    };
    let fallback = from_model.is_none();
    let text = from_model
        .or_else(|| most_frequent_text(members.iter().map(|m| m.text.as_str())))
        .unwrap_or_default();
    (Representative::new(qid, text, members.len() as u64), fallback)
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummarizeOutput {
    pub representatives: Vec<Representative>,
    pub fallbacks: usize,
}

/// Summarizes every non-empty cluster; qids are `Q0001`, `Q0002`, ... in
/// cluster order.
pub async fn summarize_clusters(
    clusters: &[ClusterAssignment],
    gateway: &LlmGateway,
    prompts: &PromptSet,
    config: &MiningConfig,
) -> SummarizeOutput {
    let non_empty: Vec<&ClusterAssignment> = clusters.iter().filter(|c| !c.members.is_empty()).collect();
    let results: Vec<(Representative, bool)> = stream::iter(non_empty.iter().enumerate())
        .map(|(i, c)| summarize_cluster(format!("Q{:04}", i + 1), &c.members, gateway, prompts, config))
        .buffered(config.concurrency.max(1))
        .collect()
        .await;
    let fallbacks = results.iter().filter(|(_, f)| *f).count();
    SummarizeOutput {
        representatives: results.into_iter().map(|(r, _)| r).collect(),
        fallbacks,
    }
}

fn render_reps(reps: &[Representative]) -> String {
    reps.iter()
        .map(|r| format!("[{}] {} (frequency {})", r.qid, r.text, r.frequency))
        .collect::<Vec<_>>()
        .join("\n")
}

fn groups_from(items: &[String]) -> Vec<MergeGroup> {
    items
        .iter()
        .map(|item| MergeGroup(split_ids(item).into_iter().map(str::to_string).collect()))
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MergeOutput {
    pub representatives: Vec<Representative>,
    pub groups_applied: usize,
    pub groups_rejected: usize,
    /// The model call failed and the input passed through.
    pub failed: bool,
}

/// Collapses the groups of equivalent representatives the model proposes.
/// Groups naming unknown or already-grouped qids are ignored.
pub async fn merge_representatives(
    reps: &[Representative],
    gateway: &LlmGateway,
    prompts: &PromptSet,
    config: &MiningConfig,
) -> MergeOutput {
    if reps.is_empty() {
        return MergeOutput::default();
    }
    let req = request(
        RoleTag::Merge,
        prompts.render(RoleTag::Merge, &[("representatives", &render_reps(reps))]),
        config,
    );
    let items = match gateway.complete_list(&req, reps.len()).await {
        Ok(items) => items,
        Err(e) => {
            tracing::warn!(error = %e, "merge failed; keeping representatives as they are");
            return MergeOutput {
                representatives: reps.to_vec(),
                failed: true,
                ..Default::default()
            };
        }
    };
    let groups = groups_from(&items);
    let outcome = apply_merge_groups(reps, &groups, Unlisted::Keep);
    for (i, why) in &outcome.rejected {
        tracing::warn!(group = i, reason = ?why, "ignoring merge group");
    }
    MergeOutput {
        groups_applied: groups.len() - outcome.rejected.len(),
        groups_rejected: outcome.rejected.len(),
        representatives: outcome.representatives,
        failed: false,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", content = "reason", rename_all = "snake_case")]
pub enum ReviewStatus {
    Skipped,
    Applied,
    /// The reviewer's list broke a rule and the merged list stands.
    Discarded(String),
    Failed(String),
}

/// Final redundancy pass. The reviewer returns the whole list as groups;
/// ids it leaves out are dropped, which the conservation check catches.
pub async fn final_review(
    merged: &[Representative],
    gateway: &LlmGateway,
    prompts: &PromptSet,
    config: &MiningConfig,
) -> (Vec<Representative>, ReviewStatus) {
    if !config.review_enabled {
        return (merged.to_vec(), ReviewStatus::Skipped);
    }
    if merged.is_empty() {
        return (Vec::new(), ReviewStatus::Applied);
    }
    let req = request(
        RoleTag::Review,
        prompts.render(RoleTag::Review, &[("representatives", &render_reps(merged))]),
        config,
    );
    let items = match gateway.complete_list(&req, merged.len()).await {
        Ok(items) => items,
        Err(e) => {
            tracing::warn!(error = %e, "review failed; using merged list");
            return (merged.to_vec(), ReviewStatus::Failed(e.to_string()));
        }
    };
    let outcome = apply_merge_groups(merged, &groups_from(&items), Unlisted::Drop);
    match check_review(merged, &outcome.representatives) {
        Ok(()) => (outcome.representatives, ReviewStatus::Applied),
        Err(why) => {
            tracing::warn!(reason = ?why, "discarding review output");
            (merged.to_vec(), ReviewStatus::Discarded(format!("{why:?}")))
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackfillOutput {
    pub stored: usize,
    pub answered: usize,
    pub rag_failures: usize,
}

/// Stores each representative as a mined FAQ entry with a RAG answer; an
/// entry whose answer could not be fetched is stored without one.
pub async fn backfill_answers(
    reps: &[Representative],
    rag: &RagClient,
    store: &FaqStore,
    config: &MiningConfig,
) -> Result<BackfillOutput, MiningError> {
    let answers: Vec<Option<String>> = stream::iter(reps)
        .map(|r| async move {
            let req = RagRequest::new(r.text.clone()).with_deadline(config.rag_deadline());
            match rag.retrieve(&req).await {
                Ok(a) => Some(a.text),
                Err(e) => {
                    tracing::warn!(qid = %r.qid, error = %e, "no answer for mined question");
                    None
                }
            }
        })
        .buffered(config.concurrency.max(1))
        .collect()
        .await;
    let mut out = BackfillOutput::default();
    for (rep, answer) in reps.iter().zip(answers) {
        if answer.is_some() {
            out.answered += 1;
        } else {
            out.rag_failures += 1;
        }
        store
            .upsert(EntryFields {
                qid: Some(rep.qid.clone()),
                question: rep.text.clone(),
                answer,
                frequency: Some(rep.frequency),
                source: Some(Source::Mined),
            })
            .await?;
        out.stored += 1;
    }
    Ok(out)
}
