use std::sync::Arc;

use async_trait::async_trait;
use faqassist_core::conversation::{Conversation, Speaker};
use faqassist_core::representative::{select_top, total_frequency, Representative};
use proptest::prelude::*;

use super::synth::{builtin_intents, synth_corpus, SynthSpec};
use super::*;
use crate::embedding::DeterministicEmbedder;
use crate::llm::scripted::{FailureMode, ScriptRule, ScriptedBehavior, ScriptedResponse};
use crate::rag::{RagAnswer, RagBackend, RagError, RagRequest, ScriptedRag};
use crate::store::StoreConfig;

fn gateway(b: ScriptedBehavior) -> LlmGateway {
    LlmGateway::scripted(b)
}

fn text_for(role: RoleTag, reply: &str) -> ScriptedBehavior {
    ScriptedBehavior {
        rules: vec![ScriptRule::role(role, ScriptedResponse::Text(reply.into()))],
        ..ScriptedBehavior::offline()
    }
    .with_fallback_rules()
}

trait WithFallback {
    fn with_fallback_rules(self) -> Self;
}

impl WithFallback for ScriptedBehavior {
    /// Keeps the offline heuristics for every other role.
    fn with_fallback_rules(mut self) -> Self {
        self.rules.extend(ScriptedBehavior::offline().rules);
        self
    }
}

fn call(id: &str, customer: &[&str]) -> Conversation {
    let mut c = Conversation::new(id);
    c.append_turn(Speaker::Agent, "How can I help?").unwrap();
    for t in customer {
        c.append_turn(Speaker::Customer, t).unwrap();
        c.append_turn(Speaker::Agent, "Sure.").unwrap();
    }
    c
}

fn raw(texts: &[&str]) -> Vec<RawQuestion> {
    texts
        .iter()
        .enumerate()
        .map(|(i, t)| RawQuestion {
            text: t.to_string(),
            call_id: format!("c{i}"),
            turn_index: 0,
        })
        .collect()
}

fn filtered(texts: &[&str]) -> Vec<FilteredQuestion> {
    texts
        .iter()
        .map(|t| FilteredQuestion {
            text: t.to_string(),
            call_id: "c".into(),
        })
        .collect()
}

fn cfg() -> MiningConfig {
    MiningConfig::default()
}

#[tokio::test]
async fn extract_counts_and_silence() {
    let g = gateway(ScriptedBehavior::offline());
    let p = PromptSet::builtin();
    let quiet = [call("q", &["I just wanted to say hi."])];
    let out = extract_questions(&quiet, &g, &p, &cfg()).await.unwrap();
    assert!(out.questions.is_empty());

    let calls: Vec<_> = (0..10)
        .map(|i| call(&format!("c{i}"), &["How do I reset my router?", "When is my bill due?"]))
        .collect();
    let out = extract_questions(&calls, &g, &p, &cfg()).await.unwrap();
    assert_eq!(out.questions.len(), 20);
    assert_eq!(out.questions[1].call_id, "c0");
    // Provenance points at the customer turn holding the question.
    assert_eq!(out.questions[1].turn_index, 3);
    assert!(matches!(
        extract_questions(&[], &g, &p, &cfg()).await,
        Err(MiningError::NoTranscripts)
    ));
}

#[tokio::test]
async fn extract_aborts_above_failure_ratio() {
    let behavior = ScriptedBehavior {
        rules: vec![ScriptRule::new(
            crate::llm::scripted::PromptMatcher::Contains("FAILME".into()),
            ScriptedResponse::Text(String::new()),
        )
        .with_failure(FailureMode::Error)],
        ..ScriptedBehavior::offline()
    }
    .with_fallback_rules();
    let g = gateway(behavior);
    let p = PromptSet::builtin();
    let mk = |bad: usize| -> Vec<Conversation> {
        (0..10)
            .map(|i| call(&format!("c{i}"), &[if i < bad { "FAILME?" } else { "Is it fine?" }]))
            .collect()
    };
    let out = extract_questions(&mk(2), &g, &p, &cfg()).await.unwrap();
    assert_eq!((out.failed_calls, out.questions.len()), (2, 8));
    assert!(matches!(
        extract_questions(&mk(3), &g, &p, &cfg()).await,
        Err(MiningError::TooManyFailures { failed: 3, total: 10 })
    ));
}

#[tokio::test]
async fn long_calls_are_chunked() {
    let g = gateway(ScriptedBehavior::offline());
    let p = PromptSet::builtin();
    let config = MiningConfig {
        prompt_budget_chars: 60,
        ..cfg()
    };
    let c = call("long", &["How do I reset my router?", "When is my bill due?", "Can I pay online?"]);
    let out = extract_questions(&[c], &g, &p, &config).await.unwrap();
    assert!(out.chunks > 1);
    assert_eq!(out.questions.len(), 3);
}

#[tokio::test]
async fn critic_batches_of_thirty() {
    let g = gateway(ScriptedBehavior::offline());
    let p = PromptSet::builtin();
    let texts: Vec<String> = (0..61).map(|i| format!("Question number {i}?")).collect();
    let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
    let out = critic_filter(&raw(&refs), &g, &p, &cfg()).await;
    assert_eq!(out.batches, 3);
    assert_eq!(g.calls_for(RoleTag::Critic), 3);
    assert_eq!(out.kept.len(), 61);

    let out = critic_filter(&raw(&["How are you today?", "When is my bill due?"]), &g, &p, &cfg()).await;
    assert_eq!(
        out.kept.iter().map(|q| q.text.as_str()).collect::<Vec<_>>(),
        ["When is my bill due?"]
    );

    let out = critic_filter(&[], &g, &p, &cfg()).await;
    assert_eq!((out.batches, out.kept.len()), (0, 0));
}

#[tokio::test]
async fn critic_fails_open_on_garbage() {
    let behavior = ScriptedBehavior::offline().with_role_failure(RoleTag::Critic, FailureMode::GarbageOutput);
    let g = gateway(behavior);
    let out = critic_filter(
        &raw(&["How are you today?", "When is my bill due?"]),
        &g,
        &PromptSet::builtin(),
        &cfg(),
    )
    .await;
    assert_eq!(out.kept.len(), 2);
    assert_eq!(out.fail_open_batches, 1);
    // One prompt plus the single reprompt.
    assert_eq!(g.calls_for(RoleTag::Critic), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn critic_batch_count_is_ceiling(n in 0usize..200, batch in 1usize..50) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let g = gateway(ScriptedBehavior::offline());
        let texts: Vec<String> = (0..n).map(|i| format!("Q {i}?")).collect();
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let config = MiningConfig { critic_batch: batch, ..cfg() };
        let out = rt.block_on(critic_filter(&raw(&refs), &g, &PromptSet::builtin(), &config));
        prop_assert_eq!(out.batches, n.div_ceil(batch));
        prop_assert_eq!(g.calls_for(RoleTag::Critic) as usize, n.div_ceil(batch));
    }
}

#[tokio::test]
async fn cluster_clamps_k_and_groups_duplicates() {
    let emb = DeterministicEmbedder::new(64, 0);
    let qs: Vec<String> = (0..10).map(|i| format!("distinct question {i}?")).collect();
    let refs: Vec<&str> = qs.iter().map(String::as_str).collect();
    let out = cluster_questions(&filtered(&refs), &emb, &cfg()).await.unwrap();
    assert_eq!((out.k_requested, out.k_used), (85, 10));
    assert_eq!(out.objective, 0.0);

    let qs = filtered(&[
        "How do I reset my router?",
        "When is my bill due?",
        "How do I reset my router?",
        "Can I upgrade my plan?",
        "Why is my internet slow?",
    ]);
    let config = MiningConfig { k: 3, ..cfg() };
    for seed in 0..10 {
        let out = cluster_questions(
            &qs,
            &emb,
            &MiningConfig {
                kmeans_seed: seed,
                ..config.clone()
            },
        )
        .await
        .unwrap();
        let home = |i: usize| out.clusters.iter().position(|c| c.members.contains(&qs[i])).unwrap();
        assert_eq!(home(0), home(2));
        let total: usize = out.clusters.iter().map(|c| c.members.len()).sum();
        assert_eq!(total, 5);
    }
}

#[tokio::test]
async fn summarize_counts_and_falls_back() {
    let p = PromptSet::builtin();
    let g = gateway(ScriptedBehavior::offline());
    let members = filtered(&["a?", "b?", "a?", "c?", "b?", "a?", "d?"]);
    let (rep, fallback) = summarize_cluster("Q0001".into(), &members, &g, &p, &cfg()).await;
    assert_eq!((rep.frequency, fallback), (7, false));

    let (single, _) = summarize_cluster("Q0002".into(), &filtered(&["only?"]), &g, &p, &cfg()).await;
    assert_eq!((single.text.as_str(), single.frequency), ("only?", 1));

    let broken = gateway(ScriptedBehavior::offline().with_role_failure(RoleTag::Summarize, FailureMode::Error));
    let (rep, fallback) = summarize_cluster("Q0003".into(), &filtered(&["a", "a", "b"]), &broken, &p, &cfg()).await;
    assert_eq!((rep.text.as_str(), fallback), ("a", true));
    assert_eq!(rep.member_qids, ["Q0003"]);
}

fn rep(qid: &str, text: &str, f: u64) -> Representative {
    Representative::new(qid, text, f)
}

#[tokio::test]
async fn merge_aggregates_and_ignores_bad_groups() {
    let p = PromptSet::builtin();
    let reps = vec![
        rep("Q0001", "reset router", 5),
        rep("Q0002", "restart router", 7),
        rep("Q0003", "bill", 2),
    ];
    let g = gateway(text_for(RoleTag::Merge, "1. Q0001, Q0002\n2. Q0003, Q9999"));
    let out = merge_representatives(&reps, &g, &p, &cfg()).await;
    assert_eq!(out.representatives.len(), 2);
    assert_eq!(out.representatives[0].frequency, 12);
    assert_eq!(out.representatives[0].member_qids, ["Q0001", "Q0002"]);
    assert_eq!((out.groups_applied, out.groups_rejected), (1, 1));

    let g = gateway(text_for(RoleTag::Merge, "none"));
    assert_eq!(merge_representatives(&reps, &g, &p, &cfg()).await.representatives, reps);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn merge_conserves_frequency(
        freqs in proptest::collection::vec(1u64..50, 1..25),
        groups in proptest::collection::vec(proptest::collection::vec(0usize..30, 1..5), 0..8),
    ) {
        let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
        let reps: Vec<_> = freqs.iter().enumerate().map(|(i, &f)| rep(&format!("Q{:04}", i + 1), &format!("q{i}"), f)).collect();
        let reply = if groups.is_empty() {
            "none".to_string()
        } else {
            groups
                .iter()
                .enumerate()
                .map(|(i, g)| format!("{}. {}", i + 1, g.iter().map(|j| format!("Q{:04}", j + 1)).collect::<Vec<_>>().join(", ")))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let g = gateway(text_for(RoleTag::Merge, &reply));
        let out = rt.block_on(merge_representatives(&reps, &g, &PromptSet::builtin(), &cfg()));
        prop_assert_eq!(total_frequency(&out.representatives), total_frequency(&reps));
        let mut members: Vec<&String> = out.representatives.iter().flat_map(|r| &r.member_qids).collect();
        members.sort();
        let before = members.len();
        members.dedup();
        prop_assert_eq!(before, members.len());
        prop_assert_eq!(members.len(), reps.len());
    }
}

#[tokio::test]
async fn review_rules() {
    let p = PromptSet::builtin();
    let merged = vec![
        rep("Q0001", "reset router", 5),
        rep("Q0002", "bill due", 3),
        rep("Q0003", "late fee", 2),
    ];

    let off = MiningConfig {
        review_enabled: false,
        ..cfg()
    };
    let g = gateway(ScriptedBehavior::offline());
    assert_eq!(final_review(&merged, &g, &p, &off).await, (merged.clone(), ReviewStatus::Skipped));
    assert_eq!(g.calls(), 0);

    // Leaves out Q0003: conservation breaks and the merged list stands.
    let g = gateway(text_for(RoleTag::Review, "1. Q0001\n2. Q0002"));
    let (out, status) = final_review(&merged, &g, &p, &cfg()).await;
    assert_eq!(out, merged);
    assert!(matches!(status, ReviewStatus::Discarded(_)));

    let g = gateway(text_for(RoleTag::Review, "1. Q0001\n2. Q0002, Q0003"));
    let (out, status) = final_review(&merged, &g, &p, &cfg()).await;
    assert_eq!(status, ReviewStatus::Applied);
    assert_eq!(out.len(), 2);
    assert_eq!(out[1].frequency, 5);
    assert_eq!(out[1].member_qids, ["Q0002", "Q0003"]);

    let g = gateway(text_for(RoleTag::Review, "1. Q0001"));
    let (_, status) = final_review(&merged, &g, &p, &cfg()).await;
    assert!(matches!(status, ReviewStatus::Discarded(_)));
}

#[test]
fn select_top_examples() {
    let many: Vec<_> = (0..150).map(|i| rep(&format!("Q{i:04}"), "q", (i % 17) as u64 + 1)).collect();
    assert_eq!(select_top(many, 100).len(), 100);
    let few: Vec<_> = (0..40).map(|i| rep(&format!("Q{i:04}"), "q", 1)).collect();
    assert_eq!(select_top(few, 100).len(), 40);
    let tie = vec![rep("Q0009", "x", 3), rep("Q0002", "y", 3), rep("Q0001", "z", 9)];
    let top = select_top(tie, 2);
    assert_eq!(top.iter().map(|r| r.qid.as_str()).collect::<Vec<_>>(), ["Q0001", "Q0002"]);
}

struct FailOn(&'static str);

#[async_trait]
impl RagBackend for FailOn {
    async fn retrieve(&self, req: &RagRequest) -> Result<RagAnswer, RagError> {
        if req.question.contains(self.0) {
            return Err(RagError::DeadlineExceeded);
        }
        Ok(RagAnswer {
            text: format!("answer to {}", req.question),
            source_refs: vec![],
            latency: Default::default(),
        })
    }
}

#[tokio::test]
async fn backfill_is_fail_soft() {
    let store = FaqStore::in_memory(StoreConfig::new(64), Arc::new(DeterministicEmbedder::new(64, 0)));
    let rag = RagClient::new(Arc::new(FailOn("late fee")));
    let reps = vec![rep("Q0001", "reset router?", 5), rep("Q0002", "late fee?", 3)];
    let out = backfill_answers(&reps, &rag, &store, &cfg()).await.unwrap();
    assert_eq!((out.stored, out.answered, out.rag_failures), (2, 1, 1));
    let e = store.get("Q0001").unwrap();
    assert_eq!(
        (e.frequency, e.source, e.answer.as_deref()),
        (5, crate::store::Source::Mined, Some("answer to reset router?"))
    );
    assert!(store.get("Q0002").unwrap().answer.is_none());
    assert_eq!(
        backfill_answers(&[], &rag, &store, &cfg()).await.unwrap(),
        BackfillOutput::default()
    );
}

fn small_corpus() -> Vec<Conversation> {
    let spec = SynthSpec::new(
        100,
        builtin_intents()
            .into_iter()
            .take(6)
            .map(|mut i| {
                i.target_frequency /= 2;
                i
            })
            .collect(),
        0.3,
    );
    synth_corpus(&spec, 11).unwrap().transcripts
}

async fn run(transcripts: &[Conversation], config: &MiningConfig, g: &LlmGateway) -> (MiningReport, FaqStore) {
    let emb = DeterministicEmbedder::new(256, 0);
    let store = FaqStore::in_memory(StoreConfig::new(256), Arc::new(emb.clone()));
    let rag = RagClient::scripted(ScriptedRag::default());
    let prompts = PromptSet::builtin();
    let deps = MiningDeps {
        gateway: g,
        embedder: &emb,
        rag: &rag,
        store: &store,
        prompts: &prompts,
    };
    let report = run_pipeline(transcripts, config, &deps).await.unwrap();
    (report, store)
}

#[tokio::test]
async fn pipeline_conserves_and_caches() {
    let dir = tempfile::tempdir().unwrap();
    let config = MiningConfig {
        k: 12,
        cache_dir: Some(dir.path().to_path_buf()),
        ..cfg()
    };
    let transcripts = small_corpus();
    let g = gateway(ScriptedBehavior::offline());
    let (first, store) = run(&transcripts, &config, &g).await;
    assert!(first.stages.iter().all(|s| !s.cache_hit));
    assert_eq!(first.summarized_frequency, first.filtered_questions as u64);
    assert_eq!(first.merged_frequency, first.summarized_frequency);
    assert_eq!(first.reviewed_frequency, first.merged_frequency);
    assert_eq!(first.review, Some(ReviewStatus::Applied));
    assert_eq!(first.backfill.stored, first.selected.len());
    assert_eq!(store.len(), first.selected.len());
    // Member qids are disjoint and cover every summarized qid.
    let mut members: Vec<&String> = first.selected.iter().flat_map(|r| &r.member_qids).collect();
    members.sort();
    let n = members.len();
    members.dedup();
    assert_eq!((n, n), (members.len(), first.clusters));
    let csv_first = std::fs::read(dir.path().join("merged_representatives.csv")).unwrap();

    let calls_before = g.calls();
    let (second, _) = run(&transcripts, &config, &g).await;
    assert_eq!(g.calls(), calls_before);
    assert!(second.stages.iter().filter(|s| s.stage != "backfill").all(|s| s.cache_hit));
    assert_eq!(second.selected, first.selected);
    assert_eq!(std::fs::read(dir.path().join("merged_representatives.csv")).unwrap(), csv_first);
    let header = String::from_utf8(csv_first).unwrap();
    assert!(header.starts_with("qid,text,frequency,member_qids\n"));
    let filtered = std::fs::read_to_string(dir.path().join("filtered_questions.csv")).unwrap();
    assert!(filtered.starts_with("text,call_id\n"));
}

#[tokio::test]
async fn pipeline_is_deterministic_without_cache() {
    let transcripts = small_corpus();
    let config = MiningConfig { k: 12, ..cfg() };
    let (a, _) = run(&transcripts, &config, &gateway(ScriptedBehavior::offline())).await;
    let (b, _) = run(&transcripts, &config, &gateway(ScriptedBehavior::offline())).await;
    assert_eq!(a.selected, b.selected);
    assert_eq!(a.kmeans_objective, b.kmeans_objective);
}

#[tokio::test]
async fn disabled_review_is_reported_skipped() {
    let config = MiningConfig {
        k: 12,
        review_enabled: false,
        ..cfg()
    };
    let g = gateway(ScriptedBehavior::offline());
    let (report, _) = run(&small_corpus(), &config, &g).await;
    assert_eq!(report.review, Some(ReviewStatus::Skipped));
    assert_eq!(g.calls_for(RoleTag::Review), 0);
}

#[test]
fn config_validation() {
    assert!(cfg().validate().is_ok());
    assert!(MiningConfig { k: 1, ..cfg() }.validate().is_err());
    assert!(MiningConfig { critic_batch: 0, ..cfg() }.validate().is_err());
    let c: MiningConfig = toml::from_str("k = 40\nreview_enabled = false").unwrap();
    assert_eq!((c.k, c.review_enabled, c.critic_batch, c.top_n), (40, false, 30, 100));
}
