use std::sync::Arc;

use faqassist_core::conversation::{Conversation, Speaker};

use super::*;
use crate::mining::synth::{builtin_intents, builtin_intents_for, synth_corpus, SynthSpec};
use crate::store::{EntryFields, FaqStore, StoreConfig};

const DIM: usize = 256;

async fn store(answered: bool) -> Arc<FaqStore> {
    let store = FaqStore::in_memory(StoreConfig::new(DIM), Arc::new(DeterministicEmbedder::new(DIM, 0)));
    for (i, intent) in builtin_intents().into_iter().enumerate() {
        store
            .upsert(EntryFields {
                qid: Some(format!("Q{:04}", i + 1)),
                question: intent.question,
                answer: (answered || i % 2 == 0).then(|| format!("Answer {i}")),
                ..Default::default()
            })
            .await
            .unwrap();
    }
    Arc::new(store)
}

async fn engine(answered: bool) -> Engine {
    Engine::new(
        EngineConfig::default(),
        store(answered).await,
        Arc::new(LlmGateway::scripted(ScriptedBehavior::offline())),
        RagClient::scripted(ScriptedRag::default()),
    )
}

fn calls(n: usize, seed: u64) -> Vec<Conversation> {
    synth_corpus(&SynthSpec::new(n, builtin_intents_for(n), 0.2), seed)
        .unwrap()
        .transcripts
}

#[tokio::test(start_paused = true)]
async fn runs_count_transcripts_times_repetitions() {
    let e = engine(true).await;
    let m = replay(
        &e,
        &calls(10, 1),
        &ReplayPolicy::new(SelectionRule::None),
        10,
        ReplayOptions::default(),
    )
    .await
    .unwrap();
    assert_eq!(m.runs, 100);
    assert!(m.suggestion_sets > 0);
    assert_eq!(m.selections(), 0);
    assert_eq!(m.rag_calls_made, 0);
    // The base engine is untouched by its forks.
    assert_eq!(e.ledger().snapshot().sets, 0);
    assert_eq!(e.rag().counter().calls_made(), 0);
}

#[tokio::test(start_paused = true)]
async fn matched_policy_bypasses_rag_on_answered_store() {
    let e = engine(true).await;
    let m = replay(
        &e,
        &calls(10, 2),
        &ReplayPolicy::new(SelectionRule::AlwaysFirstMatched),
        2,
        ReplayOptions::default(),
    )
    .await
    .unwrap();
    assert!(m.matched_selected > 0);
    assert_eq!(m.generated_selected, 0);
    assert_eq!(m.rag_calls_made, 0);
    assert_eq!(m.rag_calls_bypassed, m.selections());
}

fn asking(questions: &[&str]) -> Conversation {
    let mut c = Conversation::new("asking");
    for q in questions {
        c.append_turn(Speaker::Customer, q).unwrap();
        c.append_turn(Speaker::Agent, "Let me look.").unwrap();
    }
    c
}

#[tokio::test(start_paused = true)]
async fn generated_policy_costs_one_call_per_selection() {
    let e = engine(true).await;
    let questions = [
        "Do you ship to Canada?",
        "Can I order a second remote control?",
        "Is there a loyalty programme for members?",
        "What colour options are available for the tablet case?",
        "Does the warehouse open on public holidays?",
        "Can my neighbour collect the parcel for me?",
        "Are refurbished phones covered by insurance?",
    ];
    let call = asking(&questions);
    let indices = (0..questions.len()).map(|i| 2 * i).collect();
    let policy = ReplayPolicy::new(SelectionRule::AlwaysFirstGenerated).with_trigger(TriggerPlan::ManualAt { indices });
    let m = replay(&e, &[call], &policy, 1, ReplayOptions::default()).await.unwrap();
    assert_eq!(m.suggestion_sets, 7);
    assert_eq!(m.generated_selected, 7);
    assert_eq!(m.rag_calls_made, 7);
    assert_eq!(m.rag_calls_bypassed, 0);
}

#[tokio::test(start_paused = true)]
async fn mixed_policy_reconciles() {
    let e = engine(false).await;
    for seed in 0..4 {
        let policy = ReplayPolicy::new(SelectionRule::Random { seed });
        let m = replay(&e, &calls(10, seed), &policy, 3, ReplayOptions::default()).await.unwrap();
        assert!(m.selections() > 0);
        assert!(m.reconciles(), "{m:?}");
        assert_eq!(m.rag_calls_made, m.generated_selected + m.answerless_matched_selected);
        assert_eq!(m.rag_calls_bypassed, m.matched_selected - m.answerless_matched_selected);
        for l in [m.end_to_end, m.matching, m.generation] {
            assert!(l.p50_ms <= l.p95_ms && l.p95_ms <= l.max_ms);
        }
    }
}

#[tokio::test(start_paused = true)]
async fn every_k_turns_fires_on_schedule() {
    let e = engine(true).await;
    let call = asking(&["a?", "b?", "c?", "d?", "e?"]);
    let policy = ReplayPolicy::new(SelectionRule::None).with_trigger(TriggerPlan::EveryKTurns { k: 3 });
    let m = replay(&e, std::slice::from_ref(&call), &policy, 1, ReplayOptions::default())
        .await
        .unwrap();
    // 10 turns: after indices 2, 5 and 8.
    assert_eq!(m.suggestion_sets, 3);
    let zero = ReplayPolicy::new(SelectionRule::None).with_trigger(TriggerPlan::EveryKTurns { k: 0 });
    assert!(matches!(
        replay(&e, std::slice::from_ref(&call), &zero, 1, ReplayOptions::default()).await,
        Err(SimError::ZeroInterval)
    ));
    assert!(matches!(
        replay(&e, &[call], &policy, 0, ReplayOptions::default()).await,
        Err(SimError::NoRepetitions)
    ));
}

#[test]
fn parallel_and_sequential_agree() {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let e = rt.block_on(engine(false));
    let transcripts = calls(10, 5);
    let policy = ReplayPolicy::new(SelectionRule::Random { seed: 9 });
    let seq = replay_virtual(&e, &transcripts, &policy, 2, ReplayOptions { parallelism: 1 }).unwrap();
    let par = replay_virtual(&e, &transcripts, &policy, 2, ReplayOptions { parallelism: 8 }).unwrap();
    assert_eq!(seq, par);
    let again = replay_virtual(&e, &transcripts, &policy, 2, ReplayOptions { parallelism: 1 }).unwrap();
    assert_eq!(render_csv(&[("p".into(), seq)]), render_csv(&[("p".into(), again)]));
}

#[test]
fn csv_and_table_shapes() {
    assert_eq!(render_csv(&[]), format!("{CSV_HEADER}\n"));
    let m = ReplayMetrics {
        runs: 100,
        suggestion_sets: 7,
        ..Default::default()
    };
    let rows = vec![("alpha".to_string(), m.clone()), ("beta".to_string(), m)];
    let csv = render_csv(&rows);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], CSV_HEADER);
    assert_eq!(lines[1], "alpha,100,7,0,0,0,0,0,0,0,0,0,0");
    assert_eq!(lines.len(), 3);
    let table = render_table(&rows);
    assert!(table.contains("alpha") && table.contains("beta"));
    assert_eq!(table.lines().count(), 3);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.csv");
    emit_report(&rows, &path, ReportFormat::Csv).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), csv);
}

#[test]
fn reference_profiles_order_latencies() {
    let rt = tokio::runtime::Builder::new_current_thread().enable_all().build().unwrap();
    let e = rt.block_on(engine(true));
    let transcripts = calls(4, 3);
    let policy = ReplayPolicy::new(SelectionRule::PreferMatchedElseGenerated);
    let cmp = compare_strategies(&e, 0, &transcripts, &reference_profiles(), &policy, 1).unwrap();
    let vector = cmp.get("vector_only").unwrap();
    let serial = cmp.get("serial_large_model").unwrap();
    let parallel = cmp.get("parallel_small_models").unwrap();
    assert!(vector.end_to_end.p95_ms < parallel.end_to_end.p95_ms);
    assert!(serial.end_to_end.p50_ms >= 5000, "{serial:?}");
    assert!(parallel.end_to_end.max_ms < 2000, "{parallel:?}");
    assert_eq!(parallel.degraded, 0);
    assert!(render_table(&cmp.rows).lines().count() == 4);

    let one = &reference_profiles()[..1];
    assert!(matches!(
        compare_strategies(&e, 0, &transcripts, one, &policy, 1),
        Err(SimError::TooFewProfiles)
    ));
    let dup = vec![reference_profiles()[0].clone(), reference_profiles()[0].clone()];
    assert!(matches!(
        compare_strategies(&e, 0, &transcripts, &dup, &policy, 1),
        Err(SimError::DuplicateLabel(_))
    ));
}
