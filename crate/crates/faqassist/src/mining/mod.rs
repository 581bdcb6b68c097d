//! Offline FAQ mining: extract customer questions from call transcripts,
//! filter them with a critic, cluster, summarize each cluster, merge and
//! review the representatives, keep the most frequent, and store them with
//! answers.
//!
//! Every model-backed stage is cached on disk under a hash of its inputs,
//! so rerunning on unchanged data makes no model calls.

pub mod cache;
mod stages;
pub mod synth;

use std::path::PathBuf;
use std::time::Duration;

use faqassist_core::conversation::Conversation;
use faqassist_core::kmeans::KMeansError;
use faqassist_core::representative::{select_top, total_frequency, Representative};
use serde::{Deserialize, Serialize};
use tokio::time::Instant;

pub use cache::StageCache;
pub use stages::{
    backfill_answers, cluster_questions, critic_filter, extract_questions, final_review, merge_representatives, most_frequent_text,
    summarize_cluster, summarize_clusters, BackfillOutput, ClusterOutput, CriticOutput, ExtractOutput, MergeOutput, ReviewStatus,
    SummarizeOutput,
};

use crate::embedding::{EmbedError, Embedder};
use crate::llm::{LlmGateway, PromptSet, RoleTag};
use crate::rag::RagClient;
use crate::store::{FaqStore, StoreError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawQuestion {
    pub text: String,
    pub call_id: String,
    /// Customer turn the question was found in, best effort.
    pub turn_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredQuestion {
    pub text: String,
    pub call_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    pub cluster_id: usize,
    pub members: Vec<FilteredQuestion>,
    pub centroid: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub k: usize,
    pub critic_batch: usize,
    pub top_n: usize,
    pub kmeans_max_iter: usize,
    pub kmeans_seed: u64,
    /// Independent k-means++ starts; the best objective wins.
    pub kmeans_restarts: usize,
    pub cache_dir: Option<PathBuf>,
    pub review_enabled: bool,
    /// In-flight model or RAG calls within one stage.
    pub concurrency: usize,
    /// Transcript characters per extraction prompt before a call is split.
    pub prompt_budget_chars: usize,
    pub max_questions_per_call: usize,
    pub llm_deadline_ms: u64,
    pub rag_deadline_ms: u64,
}

impl Default for MiningConfig {
    fn default() -> Self {
        Self {
            k: 85,
            critic_batch: 30,
            top_n: 100,
            kmeans_max_iter: 100,
            kmeans_seed: 0,
            kmeans_restarts: 1,
            cache_dir: None,
            review_enabled: true,
            concurrency: 8,
            prompt_budget_chars: 16_000,
            max_questions_per_call: 50,
            llm_deadline_ms: 60_000,
            rag_deadline_ms: 30_000,
        }
    }
}

impl MiningConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.k < 2 {
            return Err("k must be at least 2".into());
        }
        for (name, v) in [
            ("critic_batch", self.critic_batch),
            ("top_n", self.top_n),
            ("kmeans_max_iter", self.kmeans_max_iter),
            ("concurrency", self.concurrency),
            ("prompt_budget_chars", self.prompt_budget_chars),
            ("max_questions_per_call", self.max_questions_per_call),
        ] {
            if v == 0 {
                return Err(format!("{name} must be at least 1"));
            }
        }
        Ok(())
    }

    pub fn llm_deadline(&self) -> Duration {
        Duration::from_millis(self.llm_deadline_ms.max(1))
    }

    pub fn rag_deadline(&self) -> Duration {
        Duration::from_millis(self.rag_deadline_ms.max(1))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MiningError {
    #[error("no transcripts to mine")]
    NoTranscripts,
    #[error("question extraction failed for {failed} of {total} calls")]
    TooManyFailures { failed: usize, total: usize },
    #[error("invalid mining configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    KMeans(#[from] KMeansError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Serializable form of a representative for caches and reports.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepRecord {
    pub qid: String,
    pub text: String,
    pub frequency: u64,
    pub member_qids: Vec<String>,
}

impl From<&Representative> for RepRecord {
    fn from(r: &Representative) -> Self {
        Self {
            qid: r.qid.clone(),
            text: r.text.clone(),
            frequency: r.frequency,
            member_qids: r.member_qids.clone(),
        }
    }
}

impl From<RepRecord> for Representative {
    fn from(r: RepRecord) -> Self {
        Representative {
            qid: r.qid,
            text: r.text,
            frequency: r.frequency,
            member_qids: r.member_qids,
        }
    }
}

fn records(reps: &[Representative]) -> Vec<RepRecord> {
    reps.iter().map(RepRecord::from).collect()
}

fn reps(records: Vec<RepRecord>) -> Vec<Representative> {
    records.into_iter().map(Representative::from).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub cache_hit: bool,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MiningReport {
    pub calls: usize,
    pub failed_calls: usize,
    pub raw_questions: usize,
    pub critic_batches: usize,
    pub critic_fail_open_batches: usize,
    pub filtered_questions: usize,
    pub k_requested: usize,
    pub k_used: usize,
    pub kmeans_iterations: usize,
    pub kmeans_objective: f64,
    pub clusters: usize,
    pub summarize_fallbacks: usize,
    pub summarized_frequency: u64,
    pub merged_count: usize,
    pub merged_frequency: u64,
    pub merge_groups_applied: usize,
    pub merge_groups_rejected: usize,
    pub review: Option<ReviewStatus>,
    pub reviewed_count: usize,
    pub reviewed_frequency: u64,
    pub selected: Vec<RepRecord>,
    pub backfill: BackfillOutput,
    pub stages: Vec<StageTiming>,
}

/// Everything the pipeline calls out to.
pub struct MiningDeps<'a> {
    pub gateway: &'a LlmGateway,
    pub embedder: &'a dyn Embedder,
    pub rag: &'a RagClient,
    pub store: &'a FaqStore,
    pub prompts: &'a PromptSet,
}

#[derive(Serialize, Deserialize)]
struct CachedSummary {
    representatives: Vec<RepRecord>,
    fallbacks: usize,
}

#[derive(Serialize, Deserialize)]
struct CachedMerge {
    representatives: Vec<RepRecord>,
    groups_applied: usize,
    groups_rejected: usize,
    failed: bool,
}

#[derive(Serialize, Deserialize)]
struct CachedReview {
    representatives: Vec<RepRecord>,
    status: ReviewStatus,
}

fn json<T: Serialize>(v: &T) -> Vec<u8> {
    serde_json::to_vec(v).expect("stage values serialize")
}

fn csv_bytes<const N: usize>(header: [&str; N], rows: impl IntoIterator<Item = [String; N]>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory csv");
    for row in rows {
        w.write_record(&row).expect("in-memory csv");
    }
    w.into_inner().expect("in-memory csv")
}

fn rep_rows(reps: &[Representative], with_members: bool) -> Vec<u8> {
    if with_members {
        csv_bytes(
            ["qid", "text", "frequency", "member_qids"],
            reps.iter()
                .map(|r| [r.qid.clone(), r.text.clone(), r.frequency.to_string(), r.member_qids.join(";")]),
        )
    } else {
        csv_bytes(
            ["qid", "text", "frequency"],
            reps.iter().map(|r| [r.qid.clone(), r.text.clone(), r.frequency.to_string()]),
        )
    }
}

struct Runner<'a> {
    cache: StageCache,
    report: MiningReport,
    model: String,
    prompts: &'a PromptSet,
}

impl Runner<'_> {
    fn prompt(&self, role: RoleTag) -> &[u8] {
        self.prompts.get(role).body.as_bytes()
    }

    /// Returns the cached output for `key` or computes and caches it.
    async fn stage<T, F, Fut>(&mut self, stage: &str, key: &str, compute: F) -> Result<T, MiningError>
    where
        T: Serialize + serde::de::DeserializeOwned,
        F: FnOnce() -> Fut,
        Fut: std::future::Future<Output = Result<T, MiningError>>,
    {
        let start = Instant::now();
        let (value, cache_hit) = match self.cache.load::<T>(stage, key) {
            Some(v) => (v, true),
            None => {
                let v = compute().await?;
                self.cache.store(stage, key, &v)?;
                (v, false)
            }
        };
        tracing::info!(stage, cache_hit, "mining stage done");
        self.report.stages.push(StageTiming {
            stage: stage.to_string(),
            cache_hit,
            elapsed_ms: start.elapsed().as_millis() as u64,
        });
        Ok(value)
    }
}

/// Runs every stage in order and stores the selected FAQs.
pub async fn run_pipeline(transcripts: &[Conversation], config: &MiningConfig, deps: &MiningDeps<'_>) -> Result<MiningReport, MiningError> {
    config.validate().map_err(MiningError::InvalidConfig)?;
    if transcripts.is_empty() {
        return Err(MiningError::NoTranscripts);
    }
    let mut run = Runner {
        cache: StageCache::new(config.cache_dir.clone()),
        report: MiningReport::default(),
        model: deps.gateway.model_id().to_string(),
        prompts: deps.prompts,
    };
    let model = run.model.clone();

    let corpus = crate::transcript::to_jsonl(transcripts);
    let extract_cfg = json(&(config.prompt_budget_chars, config.max_questions_per_call));
    let key = StageCache::key(
        "extract",
        &[corpus.as_bytes(), run.prompt(RoleTag::Extract), model.as_bytes(), &extract_cfg],
    );
    let extracted: ExtractOutput = run
        .stage("extract", &key, || {
            extract_questions(transcripts, deps.gateway, deps.prompts, config)
        })
        .await?;
    run.report.calls = extracted.calls;
    run.report.failed_calls = extracted.failed_calls;
    run.report.raw_questions = extracted.questions.len();

    let key = StageCache::key(
        "critic",
        &[
            &json(&extracted.questions),
            run.prompt(RoleTag::Critic),
            model.as_bytes(),
            &json(&config.critic_batch),
        ],
    );
    let critic: CriticOutput = run
        .stage("critic", &key, || async {
            Ok(critic_filter(&extracted.questions, deps.gateway, deps.prompts, config).await)
        })
        .await?;
    run.report.critic_batches = critic.batches;
    run.report.critic_fail_open_batches = critic.fail_open_batches;
    run.report.filtered_questions = critic.kept.len();
    run.cache.write_artifact(
        "filtered_questions.csv",
        &csv_bytes(["text", "call_id"], critic.kept.iter().map(|q| [q.text.clone(), q.call_id.clone()])),
    )?;

    let kmeans_cfg = json(&(config.k, config.kmeans_max_iter, config.kmeans_seed, config.kmeans_restarts));
    let key = StageCache::key(
        "cluster",
        &[&json(&critic.kept), deps.embedder.fingerprint().as_bytes(), &kmeans_cfg],
    );
    let clustered: ClusterOutput = run
        .stage("cluster", &key, || cluster_questions(&critic.kept, deps.embedder, config))
        .await?;
    run.report.k_requested = clustered.k_requested;
    run.report.k_used = clustered.k_used;
    run.report.kmeans_iterations = clustered.iterations;
    run.report.kmeans_objective = clustered.objective;
    run.report.clusters = clustered.clusters.iter().filter(|c| !c.members.is_empty()).count();

    let key = StageCache::key(
        "summarize",
        &[&json(&clustered.clusters), run.prompt(RoleTag::Summarize), model.as_bytes()],
    );
    let summary: CachedSummary = run
        .stage("summarize", &key, || async {
            let out = summarize_clusters(&clustered.clusters, deps.gateway, deps.prompts, config).await;
            Ok(CachedSummary {
                representatives: records(&out.representatives),
                fallbacks: out.fallbacks,
            })
        })
        .await?;
    let summarized = reps(summary.representatives);
    run.report.summarize_fallbacks = summary.fallbacks;
    run.report.summarized_frequency = total_frequency(&summarized);
    run.cache
        .write_artifact("cluster_representatives.csv", &rep_rows(&summarized, false))?;

    let key = StageCache::key(
        "merge",
        &[&json(&records(&summarized)), run.prompt(RoleTag::Merge), model.as_bytes()],
    );
    let merge: CachedMerge = run
        .stage("merge", &key, || async {
            let out = merge_representatives(&summarized, deps.gateway, deps.prompts, config).await;
            Ok(CachedMerge {
                representatives: records(&out.representatives),
                groups_applied: out.groups_applied,
                groups_rejected: out.groups_rejected,
                failed: out.failed,
            })
        })
        .await?;
    let merged = reps(merge.representatives);
    run.report.merged_count = merged.len();
    run.report.merged_frequency = total_frequency(&merged);
    run.report.merge_groups_applied = merge.groups_applied;
    run.report.merge_groups_rejected = merge.groups_rejected;
    run.cache.write_artifact("merged_representatives.csv", &rep_rows(&merged, true))?;

    let key = StageCache::key(
        "review",
        &[
            &json(&records(&merged)),
            run.prompt(RoleTag::Review),
            model.as_bytes(),
            &json(&config.review_enabled),
        ],
    );
    let review: CachedReview = run
        .stage("review", &key, || async {
            let (out, status) = final_review(&merged, deps.gateway, deps.prompts, config).await;
            Ok(CachedReview {
                representatives: records(&out),
                status,
            })
        })
        .await?;
    let reviewed = reps(review.representatives);
    run.report.review = Some(review.status);
    run.report.reviewed_count = reviewed.len();
    run.report.reviewed_frequency = total_frequency(&reviewed);
    run.cache
        .write_artifact("reviewed_representatives.csv", &rep_rows(&reviewed, true))?;

    let selected = select_top(reviewed, config.top_n);
    run.cache
        .write_artifact("selected_representatives.csv", &rep_rows(&selected, true))?;
    run.report.selected = records(&selected);

    let start = Instant::now();
    run.report.backfill = backfill_answers(&selected, deps.rag, deps.store, config).await?;
    run.report.stages.push(StageTiming {
        stage: "backfill".into(),
        cache_hit: false,
        elapsed_ms: start.elapsed().as_millis() as u64,
    });
    Ok(run.report)
}

#[cfg(test)]
mod tests;
