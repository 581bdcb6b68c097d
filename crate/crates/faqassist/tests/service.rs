mod common;

use std::time::Duration;

use common::*;
use reqwest::Method;
use serde_json::{json, Value};

const WAIT: Duration = Duration::from_secs(3);
const QUIET: Duration = Duration::from_millis(300);

async fn error_code(resp: reqwest::Response) -> (u16, String) {
    let status = resp.status().as_u16();
    let body: Value = resp.json().await.unwrap();
    (status, body["error"].as_str().unwrap_or_default().to_string())
}

#[tokio::test]
async fn auth_roles() {
    let srv = spawn(offline_engine().await).await;
    let resp = srv.http.post(srv.url("/v1/sessions")).send().await.unwrap();
    assert_eq!(error_code(resp).await, (401, "unauthenticated".into()));
    let resp = srv.http.post(srv.url("/v1/sessions")).bearer_auth("wrong").send().await.unwrap();
    assert_eq!(resp.status(), 401);
    let resp = srv.agent(Method::GET, "/v1/faqs").send().await.unwrap();
    assert_eq!(error_code(resp).await, (403, "forbidden".into()));
    let resp = srv.supervisor(Method::POST, "/v1/sessions").send().await.unwrap();
    assert_eq!(resp.status(), 201);
    let resp = srv.http.get(srv.url("/healthz")).send().await.unwrap();
    assert_eq!(resp.status(), 200);
}

#[tokio::test]
async fn session_lifecycle() {
    let srv = spawn(offline_engine().await).await;
    let a = srv.start_session().await;
    let b = srv.start_session().await;
    assert_ne!(a, b);
    let view: Value = srv
        .agent(Method::GET, &format!("/v1/sessions/{a}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(view["session_id"], a);
    assert_eq!(view["turns"], json!([]));
    let resp = srv.agent(Method::GET, "/v1/sessions/nope").send().await.unwrap();
    assert_eq!(error_code(resp).await, (404, "unknown_session".into()));
    let resp = srv.agent(Method::DELETE, &format!("/v1/sessions/{b}")).send().await.unwrap();
    assert_eq!(resp.status(), 204);
    let resp = srv.agent(Method::GET, &format!("/v1/sessions/{b}")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
}

#[tokio::test]
async fn fourth_turn_pushes_a_set() {
    let srv = spawn(offline_engine().await).await;
    let s = srv.start_session().await;
    let mut events = srv.events(&s, None).await;
    let turns = [
        ("agent", "Thanks for calling, how can I help?"),
        ("customer", "How do I reset my router?"),
        ("agent", "Let me check."),
        ("customer", "Also do you ship to Canada?"),
    ];
    for (i, (sp, t)) in turns.iter().enumerate() {
        let accepted = srv.turn(&s, sp, t).await;
        assert_eq!(accepted["turn_index"], i);
        assert_eq!(accepted["triggered"], i == 3, "turn {i}");
        if i == 1 {
            assert!(events.next(QUIET).await.is_none());
        }
    }
    let frame = events.next(WAIT).await.expect("suggestion set");
    assert_eq!(frame.event, "suggestion_set");
    assert_eq!(frame.id, Some(1));
    assert_eq!(frame.data["sequence"], 1);
    assert_eq!(frame.data["event_kind"], "suggestion_set");
    let set = &frame.data["payload"];
    assert_eq!(set["trigger_turn_index"], 3);
    let suggestions = set["suggestions"].as_array().unwrap();
    assert!(!suggestions.is_empty() && suggestions.len() <= 6);
    assert!(events.next(QUIET).await.is_none());

    let resp = srv
        .agent(Method::POST, &format!("/v1/sessions/{s}/turns"))
        .json(&json!({ "speaker": "customer", "text": "   " }))
        .send()
        .await
        .unwrap();
    assert_eq!(error_code(resp).await, (422, "empty_text".into()));
    let resp = srv
        .agent(Method::POST, &format!("/v1/sessions/{s}/turns"))
        .json(&json!({ "speaker": "robot", "text": "hi" }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 422);
    let resp = srv
        .agent(Method::POST, "/v1/sessions/missing/turns")
        .json(&json!({ "speaker": "agent", "text": "hi" }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 404);
}

#[tokio::test]
async fn manual_trigger_rules() {
    let srv = spawn(offline_engine().await).await;
    let s = srv.start_session().await;
    let trigger = || srv.agent(Method::POST, &format!("/v1/sessions/{s}/trigger")).send();
    assert_eq!(error_code(trigger().await.unwrap()).await, (409, "empty_conversation".into()));

    let mut events = srv.events(&s, None).await;
    srv.turn(&s, "customer", "How do I reset my router?").await;
    let first: Value = trigger().await.unwrap().json().await.unwrap();
    let second: Value = trigger().await.unwrap().json().await.unwrap();
    assert_eq!((first["set_seq"].as_u64(), second["set_seq"].as_u64()), (Some(1), Some(2)));
    let a = events.next(WAIT).await.unwrap();
    let b = events.next(WAIT).await.unwrap();
    assert_eq!((a.id, b.id), (Some(1), Some(2)));
    assert_eq!(b.data["payload"], second);
}

#[tokio::test]
async fn reconnect_replays_and_overruns() {
    let srv = spawn(offline_engine().await).await;
    let s = srv.start_session().await;
    srv.turn(&s, "customer", "How do I reset my router?").await;
    for _ in 0..5 {
        srv.agent(Method::POST, &format!("/v1/sessions/{s}/trigger")).send().await.unwrap();
    }
    let mut resumed = srv.events(&s, Some(4)).await;
    let replayed = resumed.drain(QUIET).await;
    assert_eq!(replayed.iter().map(|f| f.id).collect::<Vec<_>>(), [Some(5)]);

    let by_header = srv
        .agent(Method::GET, &format!("/v1/sessions/{s}/events"))
        .header("Last-Event-ID", "3")
        .send()
        .await
        .unwrap();
    let frames = EventReader::new(by_header).drain(QUIET).await;
    assert_eq!(frames.iter().map(|f| f.id).collect::<Vec<_>>(), [Some(4), Some(5)]);

    for _ in 0..61 {
        srv.agent(Method::POST, &format!("/v1/sessions/{s}/trigger")).send().await.unwrap();
    }
    // 66 events published: resuming after 1 misses 65.
    let resp = srv
        .agent(Method::GET, &format!("/v1/sessions/{s}/events?last_seq=1"))
        .send()
        .await
        .unwrap();
    let status = resp.status().as_u16();
    let body: Value = resp.json().await.unwrap();
    assert_eq!((status, body["error"].as_str()), (409, Some("buffer_overrun")));
    assert_eq!(body["detail"], json!({ "last_seen": 1, "oldest_available": 3 }));
    let frames = srv.events(&s, Some(2)).await.drain(QUIET).await;
    assert_eq!(frames.len(), 64);
}

async fn triggered_set(srv: &TestServer, s: &str, customer: &str) -> Value {
    srv.turn(s, "customer", customer).await;
    srv.agent(Method::POST, &format!("/v1/sessions/{s}/trigger"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap()
}

fn first_of(set: &Value, kind: &str) -> String {
    set["suggestions"]
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["source"]["kind"] == kind)
        .unwrap_or_else(|| panic!("no {kind} suggestion in {set}"))["suggestion_id"]
        .as_str()
        .unwrap()
        .to_string()
}

async fn select(srv: &TestServer, s: &str, id: &str) -> reqwest::Response {
    srv.agent(Method::POST, &format!("/v1/sessions/{s}/select"))
        .json(&json!({ "suggestion_id": id }))
        .send()
        .await
        .unwrap()
}

#[tokio::test]
async fn selection_routing_and_metrics() {
    let srv = spawn(offline_engine().await).await;
    let m = srv.metrics().await;
    for key in [
        "suggestion_sets",
        "faq_selections",
        "generated_selections",
        "rag_calls_made",
        "rag_calls_bypassed",
    ] {
        assert_eq!(m[key], 0, "{key}");
    }

    let s = srv.start_session().await;
    let mut events = srv.events(&s, None).await;
    let set = triggered_set(&srv, &s, "How do I reset my router? And do you ship to Canada?").await;
    assert_eq!(set["suggestions"][0]["source"]["qid"], "F1");
    let matched = first_of(&set, "matched");
    let resp = select(&srv, &s, &matched).await;
    assert_eq!(resp.status(), 200);
    let answer: Value = resp.json().await.unwrap();
    assert_eq!(answer["source"], json!({ "kind": "faq", "qid": "F1" }));
    assert_eq!(answer["text"], "Unplug it for 30 seconds.");
    let m = srv.metrics().await;
    assert_eq!((m["faq_selections"].as_u64(), m["rag_calls_made"].as_u64()), (Some(1), Some(0)));

    let generated = first_of(&set, "generated");
    let answer: Value = select(&srv, &s, &generated).await.json().await.unwrap();
    assert_eq!(answer["source"]["kind"], "rag");
    let m = srv.metrics().await;
    assert_eq!(
        (m["generated_selections"].as_u64(), m["rag_calls_made"].as_u64()),
        (Some(1), Some(1))
    );
    assert_eq!(m["rag_calls_bypassed"], 1);

    let kinds: Vec<String> = events.drain(QUIET).await.into_iter().map(|f| f.event).collect();
    assert_eq!(kinds, ["suggestion_set", "answer", "answer"]);

    // A newer set invalidates the old ids.
    let newer = triggered_set(&srv, &s, "Why was I charged a late fee?").await;
    assert_ne!(newer["set_seq"], set["set_seq"]);
    let resp = select(&srv, &s, &matched).await;
    assert_eq!(error_code(resp).await, (404, "unknown_suggestion".into()));
}

#[tokio::test]
async fn tagging_rules() {
    let srv = spawn(offline_engine().await).await;
    let s = srv.start_session().await;
    let set = triggered_set(&srv, &s, "How do I reset my router? Do you ship to Canada?").await;
    let tag = |id: String| {
        srv.agent(Method::POST, &format!("/v1/sessions/{s}/tag-faq"))
            .json(&json!({ "suggestion_id": id }))
            .send()
    };
    let matched = first_of(&set, "matched");
    let generated = first_of(&set, "generated");
    assert_eq!(error_code(tag(matched).await.unwrap()).await, (409, "not_generated".into()));
    assert_eq!(
        error_code(tag(generated.clone()).await.unwrap()).await,
        (409, "not_yet_answered".into())
    );
    assert_eq!(select(&srv, &s, &generated).await.status(), 200);
    let mut events = srv.events(&s, None).await;
    let outcome: Value = tag(generated).await.unwrap().json().await.unwrap();
    assert_eq!(outcome["merged"], false);
    let qid = outcome["qid"].as_str().unwrap();
    assert!(qid.starts_with('T'));
    let frame = events.next(WAIT).await.unwrap();
    assert_eq!(frame.event, "faq_tagged");
    assert_eq!(frame.data["payload"]["qid"], qid);
    let entry: Value = srv
        .supervisor(Method::GET, &format!("/v1/faqs/{qid}"))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(entry["source"], "runtime_tagged");
    assert_eq!(entry["frequency"], 1);
}

#[tokio::test]
async fn faq_crud() {
    let srv = spawn(offline_engine().await).await;
    let srv = &srv;
    let list = |q: &'static str| async move {
        srv.supervisor(Method::GET, &format!("/v1/faqs{q}"))
            .send()
            .await
            .unwrap()
            .json::<Value>()
            .await
            .unwrap()
    };
    let all = list("").await;
    assert_eq!(all["total"], 4);
    let answerless = list("?answerless=true").await;
    assert_eq!(answerless["total"], 1);
    assert_eq!(answerless["items"][0]["qid"], "F3");
    assert!(answerless["items"][0]["answer"].is_null());
    let page = list("?offset=1&limit=2").await;
    assert_eq!(page["items"].as_array().unwrap().len(), 2);
    assert_eq!(page["items"][0]["qid"], "F2");
    let resp = srv.supervisor(Method::GET, "/v1/faqs?limit=0").send().await.unwrap();
    assert_eq!(resp.status(), 422);

    let resp = srv
        .supervisor(Method::POST, "/v1/faqs")
        .json(&json!({ "question": "Do you ship to Canada?" }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 201);
    let created: Value = resp.json().await.unwrap();
    let qid = created["qid"].as_str().unwrap().to_string();
    assert!(qid.starts_with('S'));
    assert_eq!(created["source"], "supervisor");
    assert_eq!(list("").await["total"], 5);
    assert_eq!(list("?answerless=true").await["total"], 2);

    let updated: Value = srv
        .supervisor(Method::PUT, &format!("/v1/faqs/{qid}"))
        .json(&json!({ "answer": "Yes, within 5 days." }))
        .send()
        .await
        .unwrap()
        .json()
        .await
        .unwrap();
    assert_eq!(updated["answer"], "Yes, within 5 days.");
    assert_eq!(updated["question"], "Do you ship to Canada?");
    assert_eq!(list("?answerless=true").await["total"], 1);

    let resp = srv.supervisor(Method::DELETE, &format!("/v1/faqs/{qid}")).send().await.unwrap();
    assert_eq!(resp.status(), 204);
    let resp = srv.supervisor(Method::GET, &format!("/v1/faqs/{qid}")).send().await.unwrap();
    assert_eq!(error_code(resp).await, (404, "not_found".into()));
    let resp = srv.supervisor(Method::DELETE, &format!("/v1/faqs/{qid}")).send().await.unwrap();
    assert_eq!(resp.status(), 404);
    let resp = srv
        .supervisor(Method::POST, "/v1/faqs")
        .json(&json!({ "question": "  " }))
        .send()
        .await
        .unwrap();
    assert_eq!(error_code(resp).await, (422, "invalid_request".into()));
    let resp = srv
        .supervisor(Method::PUT, "/v1/faqs/NOPE")
        .json(&json!({ "answer": "x" }))
        .send()
        .await
        .unwrap();
    assert_eq!(resp.status(), 404);
}

#[tokio::test]
async fn supervisor_edits_change_live_matching() {
    let srv = spawn(offline_engine().await).await;
    srv.supervisor(Method::POST, "/v1/faqs")
        .json(&json!({ "question": "Do you ship to Canada?", "answer": "Yes." }))
        .send()
        .await
        .unwrap();
    let s = srv.start_session().await;
    let set = triggered_set(&srv, &s, "Do you ship to Canada?").await;
    assert_eq!(set["suggestions"][0]["text"], "Do you ship to Canada?");
    assert_eq!(set["suggestions"][0]["source"]["kind"], "matched");
}

#[tokio::test]
async fn degraded_rounds_push_a_notice() {
    use faqassist::engine::EngineConfig;
    use faqassist::llm::scripted::{FailureMode, ScriptedBehavior};
    use faqassist::llm::RoleTag;
    let behavior = ScriptedBehavior::offline().with_role_failure(RoleTag::Generate, FailureMode::Error);
    let srv = spawn(engine(store_with(FAQS).await, behavior, EngineConfig::default())).await;
    let s = srv.start_session().await;
    let mut events = srv.events(&s, None).await;
    let set = triggered_set(&srv, &s, "How do I reset my router?").await;
    assert_eq!(set["degraded"], true);
    let kinds: Vec<String> = events.drain(QUIET).await.into_iter().map(|f| f.event).collect();
    assert_eq!(kinds, ["suggestion_set", "degraded_notice"]);
    let m = srv.metrics().await;
    assert_eq!(m["events"]["degraded_notice"], 1);
    assert_eq!(m["engine"]["degraded_generate"], 1);
}
