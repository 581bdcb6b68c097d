//! Offline chat backend driven by ordered prompt rules.
//!
//! Rules are checked in order and the first match answers. A response is
//! either canned text or a [`Heuristic`]: a small deterministic stand-in for
//! the model that reads the line layout of the built-in prompt templates
//! (`customer: ...` turns, `[id] ...` candidates, `- ...` members). The
//! heuristics let the live engine and the mining pipeline run end to end
//! without a provider.

use std::collections::{BTreeMap, HashSet};
use std::time::Duration;

use async_trait::async_trait;
use faqassist_core::dedup::similarity;
use faqassist_core::ngram::embed_ngrams;
use faqassist_core::vector::Vector;
use serde::{Deserialize, Serialize};

use super::{ChatBackend, CompletionRequest, LlmError, RoleTag};

const GARBAGE: &str = "~~ <|unparseable|> ~~";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    /// Never answers; the caller's deadline fires.
    Timeout,
    Error,
    GarbageOutput,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMatcher {
    Contains(String),
    Role(RoleTag),
    Any,
}

impl PromptMatcher {
    fn matches(&self, req: &CompletionRequest) -> bool {
        match self {
            PromptMatcher::Contains(s) => req.prompt.contains(s.as_str()),
            PromptMatcher::Role(r) => req.role == *r,
            PromptMatcher::Any => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Heuristic {
    /// Questions (sentences ending in `?`) from `customer:` lines.
    CustomerQuestions { limit: usize },
    /// Ids of lines starting with `[id]`, in prompt order.
    EchoBracketed { limit: usize },
    /// Ordinals of `[n] text` lines that are not greetings, agent questions
    /// or personal-detail and verification requests.
    CriticKeep,
    /// The most frequent `- text` member line, lexicographically smallest on
    /// ties.
    MostFrequentMember,
    /// Greedy grouping of `[id] text (frequency N)` lines whose trigram
    /// cosine to the group's first member reaches `threshold`. With
    /// `full_list` singletons are listed too.
    GroupSimilar { threshold: f64, full_list: bool },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedResponse {
    Text(String),
    Heuristic(Heuristic),
}

impl Default for ScriptedResponse {
    fn default() -> Self {
        ScriptedResponse::Text("none".into())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptRule {
    pub when: PromptMatcher,
    pub respond: ScriptedResponse,
    #[serde(default)]
    pub latency_ms: Option<u64>,
    #[serde(default)]
    pub failure_mode: Option<FailureMode>,
}

impl ScriptRule {
    pub fn new(when: PromptMatcher, respond: ScriptedResponse) -> Self {
        Self {
            when,
            respond,
            latency_ms: None,
            failure_mode: None,
        }
    }

    pub fn role(role: RoleTag, respond: ScriptedResponse) -> Self {
        Self::new(PromptMatcher::Role(role), respond)
    }

    pub fn with_latency_ms(mut self, ms: u64) -> Self {
        self.latency_ms = Some(ms);
        self
    }

    pub fn with_failure(mut self, mode: FailureMode) -> Self {
        self.failure_mode = Some(mode);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ScriptedBehavior {
    #[serde(default)]
    pub rules: Vec<ScriptRule>,
    #[serde(default)]
    pub default_response: ScriptedResponse,
    #[serde(default)]
    pub latency_ms: u64,
    #[serde(default)]
    pub failure_mode: Option<FailureMode>,
}

impl ScriptedBehavior {
    /// Heuristic responder for every role: the behavior `--scripted` runs.
    pub fn offline() -> Self {
        use Heuristic::*;
        let h = ScriptedResponse::Heuristic;
        Self {
            rules: vec![
                ScriptRule::role(RoleTag::Match, h(EchoBracketed { limit: 3 })),
                ScriptRule::role(RoleTag::Generate, h(CustomerQuestions { limit: 3 })),
                ScriptRule::role(RoleTag::Extract, h(CustomerQuestions { limit: 20 })),
                ScriptRule::role(RoleTag::Critic, h(CriticKeep)),
                ScriptRule::role(RoleTag::Summarize, h(MostFrequentMember)),
                ScriptRule::role(
                    RoleTag::Merge,
                    h(GroupSimilar {
                        threshold: 0.6,
                        full_list: false,
                    }),
                ),
                ScriptRule::role(
                    RoleTag::Review,
                    h(GroupSimilar {
                        threshold: 0.6,
                        full_list: true,
                    }),
                ),
            ],
            ..Default::default()
        }
    }

    /// Same responders, with every completion delayed by `latency`.
    pub fn offline_with_latency(latency: Duration) -> Self {
        Self {
            latency_ms: latency.as_millis() as u64,
            ..Self::offline()
        }
    }

    /// Overrides the latency of every rule for `role`.
    pub fn with_role_latency(mut self, role: RoleTag, latency: Duration) -> Self {
        for rule in &mut self.rules {
            if rule.when == PromptMatcher::Role(role) {
                rule.latency_ms = Some(latency.as_millis() as u64);
            }
        }
        self
    }

    /// Makes every rule for `role` fail with `mode`.
    pub fn with_role_failure(mut self, role: RoleTag, mode: FailureMode) -> Self {
        for rule in &mut self.rules {
            if rule.when == PromptMatcher::Role(role) {
                rule.failure_mode = Some(mode);
            }
        }
        self
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    behavior: ScriptedBehavior,
    model_id: String,
}

impl ScriptedBackend {
    pub fn new(behavior: ScriptedBehavior) -> Self {
        Self {
            behavior,
            model_id: "scripted".into(),
        }
    }

    pub fn with_model_id(mut self, model_id: String) -> Self {
        self.model_id = model_id;
        self
    }

    /// The reply without latency or failure injection.
    pub fn respond(&self, req: &CompletionRequest) -> String {
        let response = self
            .behavior
            .rules
            .iter()
            .find(|r| r.when.matches(req))
            .map_or(&self.behavior.default_response, |r| &r.respond);
        render(response, &req.prompt)
    }
}

#[async_trait]
impl ChatBackend for ScriptedBackend {
    fn model_id(&self) -> &str {
        &self.model_id
    }

    async fn complete(&self, req: &CompletionRequest) -> Result<String, LlmError> {
        let rule = self.behavior.rules.iter().find(|r| r.when.matches(req));
        let latency = rule.and_then(|r| r.latency_ms).unwrap_or(self.behavior.latency_ms);
        let failure = rule.and_then(|r| r.failure_mode).or(self.behavior.failure_mode);
        if latency > 0 {
            tokio::time::sleep(Duration::from_millis(latency)).await;
        }
        match failure {
            Some(FailureMode::Timeout) => std::future::pending().await,
            Some(FailureMode::Error) => Err(LlmError::Provider("scripted failure".into())),
            Some(FailureMode::GarbageOutput) => Ok(GARBAGE.to_string()),
            None => Ok(self.respond(req)),
        }
    }
}

fn render(response: &ScriptedResponse, prompt: &str) -> String {
    match response {
        ScriptedResponse::Text(t) => t.clone(),
        ScriptedResponse::Heuristic(h) => numbered(run_heuristic(h, prompt)),
    }
}

fn numbered(items: Vec<String>) -> String {
    if items.is_empty() {
        return "none".into();
    }
    items
        .iter()
        .enumerate()
        .map(|(i, s)| format!("{}. {s}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

fn run_heuristic(h: &Heuristic, prompt: &str) -> Vec<String> {
    match h {
        Heuristic::CustomerQuestions { limit } => customer_questions(prompt, *limit),
        Heuristic::EchoBracketed { limit } => bracketed_lines(prompt)
            .into_iter()
            .map(|(id, _)| id.to_string())
            .take(*limit)
            .collect(),
        Heuristic::CriticKeep => bracketed_lines(prompt)
            .into_iter()
            .filter(|(_, text)| !is_discardable(text))
            .map(|(id, _)| id.to_string())
            .collect(),
        Heuristic::MostFrequentMember => most_frequent_member(prompt).into_iter().collect(),
        Heuristic::GroupSimilar { threshold, full_list } => group_similar(prompt, *threshold, *full_list),
    }
}

/// Sentences ending in `?` on `customer:` lines, deduplicated
/// case-insensitively.
pub fn customer_questions(prompt: &str, limit: usize) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for line in prompt.lines() {
        let line = line.trim();
        let Some(prefix) = line.get(..9) else { continue };
        if !prefix.eq_ignore_ascii_case("customer:") {
            continue;
        }
        let mut sentence = String::new();
        for c in line[9..].chars() {
            sentence.push(c);
            if matches!(c, '.' | '!' | '?') {
                let s = sentence.trim().to_string();
                sentence.clear();
                if c == '?' && s.len() > 1 && seen.insert(s.to_lowercase()) {
                    out.push(s);
                }
            }
        }
    }
    out.truncate(limit);
    out
}

fn bracketed_lines(prompt: &str) -> Vec<(&str, &str)> {
    prompt
        .lines()
        .filter_map(|l| {
            let l = l.trim().strip_prefix('[')?;
            let end = l.find(']')?;
            let id = l[..end].trim();
            (!id.is_empty()).then(|| (id, l[end + 1..].trim()))
        })
        .collect()
}

const DISCARD_MARKERS: &[&str] = &[
    "how are you",
    "hello",
    "good morning",
    "good afternoon",
    "thank you",
    "thanks for",
    "your name",
    "who am i speaking",
    "are you a",
    "email",
    "phone number",
    "verify",
    "verification",
    "authenticat",
    "ticket number",
    "date of birth",
    "security question",
    "spell my",
];

pub fn is_discardable(question: &str) -> bool {
    let q = question.to_lowercase();
    DISCARD_MARKERS.iter().any(|m| q.contains(m))
}

fn most_frequent_member(prompt: &str) -> Option<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for line in prompt.lines() {
        if let Some(m) = line.trim().strip_prefix("- ") {
            let m = m.trim();
            if !m.is_empty() {
                *counts.entry(m).or_default() += 1;
            }
        }
    }
    // BTreeMap iterates ascending, so the first maximum is the smallest string.
    let mut best: Option<(&str, usize)> = None;
    for (m, c) in counts {
        if best.is_none_or(|(_, bc)| c > bc) {
            best = Some((m, c));
        }
    }
    best.map(|(m, _)| m.to_string())
}

fn strip_frequency(text: &str) -> &str {
    match text.rfind(" (frequency") {
        Some(i) => text[..i].trim(),
        None => text.trim(),
    }
}

fn group_similar(prompt: &str, threshold: f64, full_list: bool) -> Vec<String> {
    let items: Vec<(&str, Vector)> = bracketed_lines(prompt)
        .into_iter()
        .map(|(id, text)| (id, embed_ngrams(strip_frequency(text), 256, 0)))
        .collect();
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for (i, (_, v)) in items.iter().enumerate() {
        match groups.iter_mut().find(|g| similarity(&items[g[0]].1, v) >= threshold) {
            Some(g) => g.push(i),
            None => groups.push(vec![i]),
        }
    }
    groups
        .into_iter()
        .filter(|g| full_list || g.len() > 1)
        .map(|g| g.iter().map(|&i| items[i].0).collect::<Vec<_>>().join(", "))
        .collect()
}
