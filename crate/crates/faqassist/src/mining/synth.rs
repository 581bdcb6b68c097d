//! Seeded synthetic call transcripts with planted customer intents, used to
//! check what the mining pipeline recovers.

use std::path::Path;

use faqassist_core::conversation::{Conversation, Speaker};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const DEFAULT_MAX_QUESTIONS_PER_CALL: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlantedIntent {
    pub question: String,
    #[serde(alias = "frequency")]
    pub target_frequency: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_calls: usize,
    pub intents: Vec<PlantedIntent>,
    /// Chance that a call carries one small-talk or verification question.
    pub noise_rate: f64,
    pub max_questions_per_call: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SynthError {
    #[error("infeasible corpus: {0}")]
    Infeasible(String),
    #[error("intents file {path}: {message}")]
    Intents { path: String, message: String },
}

/// Transcripts plus the ground truth behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub transcripts: Vec<Conversation>,
    /// Occurrences planted per intent, parallel to `SynthSpec::intents`.
    pub planted: Vec<usize>,
    pub noise_questions: usize,
}

const BUILTIN_INTENTS: [&str; 20] = [
    "How do I reset my router?",
    "When is my monthly bill due?",
    "Can I upgrade my data plan?",
    "Why was I charged a late fee?",
    "How can I set up automatic payments?",
    "Is international roaming included?",
    "How do I cancel my subscription?",
    "Where can I find my account statement?",
    "What are the store opening hours?",
    "How long does shipping take?",
    "Can I return a damaged item?",
    "How do I change my delivery address?",
    "Do you offer student discounts?",
    "Why is my internet connection slow?",
    "How can I transfer my number to a new carrier?",
    "What is the warranty period for my device?",
    "How do I activate my new SIM card?",
    "Can I pause my service while travelling?",
    "How do I redeem a gift card?",
    "Why was my card payment declined?",
];

/// Twenty distinct intents with frequencies 100, 95, ..., 5.
pub fn builtin_intents() -> Vec<PlantedIntent> {
    BUILTIN_INTENTS
        .iter()
        .enumerate()
        .map(|(i, q)| PlantedIntent {
            question: q.to_string(),
            target_frequency: 100 - 5 * i,
        })
        .collect()
}

/// [`builtin_intents`] with frequencies scaled from 500 calls to
/// `num_calls`; intents that scale to zero are dropped.
pub fn builtin_intents_for(num_calls: usize) -> Vec<PlantedIntent> {
    builtin_intents()
        .into_iter()
        .map(|mut i| {
            i.target_frequency = i.target_frequency * num_calls / 500;
            i
        })
        .filter(|i| i.target_frequency > 0)
        .collect()
}

impl SynthSpec {
    pub fn new(num_calls: usize, intents: Vec<PlantedIntent>, noise_rate: f64) -> Self {
        Self {
            num_calls,
            intents,
            noise_rate,
            max_questions_per_call: DEFAULT_MAX_QUESTIONS_PER_CALL,
        }
    }

    pub fn check(&self) -> Result<(), SynthError> {
        let fail = |m: String| Err(SynthError::Infeasible(m));
        if self.num_calls == 0 {
            return fail("at least one call is needed".into());
        }
        if !(0.0..=1.0).contains(&self.noise_rate) {
            return fail(format!("noise rate {} is outside [0, 1]", self.noise_rate));
        }
        for intent in &self.intents {
            if !intent.question.trim().ends_with('?') {
                return fail(format!("intent {:?} is not a question", intent.question));
            }
            if intent.target_frequency > self.num_calls {
                return fail(format!(
                    "intent {:?} wants {} occurrences but there are only {} calls",
                    intent.question, intent.target_frequency, self.num_calls
                ));
            }
        }
        let total: usize = self.intents.iter().map(|i| i.target_frequency).sum();
        let capacity = self.num_calls * self.max_questions_per_call;
        if total > capacity {
            return fail(format!("{total} planted questions exceed capacity {capacity}"));
        }
        Ok(())
    }
}

const PREFIXES: [&str; 5] = ["", "Quick question, ", "Also, ", "So, ", "One more thing, "];
const NOISE: [&str; 6] = [
    "Hello, how are you today?",
    "What is your name, by the way?",
    "Can I give you my email address?",
    "Do you need to verify my account first?",
    "Should I read out my ticket number?",
    "Do you want my phone number?",
];
const OPENERS: [&str; 4] = [
    "Hi, I have a couple of questions.",
    "I am calling about my account.",
    "I need some help please.",
    "I was told to call this line.",
];
const AGENT_REPLIES: [&str; 4] = [
    "Sure, let me look into that for you.",
    "Good point, here is how that works.",
    "Let me check the details on my side.",
    "I can help with that.",
];

/// One phrasing of `question`: an optional lead-in and an optional polite
/// tail.
fn jitter(question: &str, rng: &mut ChaCha8Rng) -> String {
    let prefix = PREFIXES[rng.random_range(0..PREFIXES.len())];
    let core = question.trim();
    let core = if prefix.is_empty() {
        core.to_string()
    } else {
        let mut chars = core.chars();
        let first = chars.next().map(|c| c.to_lowercase().to_string()).unwrap_or_default();
        // Keep "I" capitalized.
        let first = if core.starts_with("I ") { "I".to_string() } else { first };
        format!("{first}{}", chars.as_str())
    };
    let core = if rng.random_bool(0.3) {
        format!("{}, please?", core.trim_end_matches('?'))
    } else {
        core
    };
    format!("{prefix}{core}")
}

/// Deterministic corpus for `spec` and `seed`. Every planted intent appears
/// exactly its target number of times, never twice in one call.
pub fn synth_corpus(spec: &SynthSpec, seed: u64) -> Result<SynthCorpus, SynthError> {
    spec.check()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slots: Vec<usize> = (0..spec.num_calls).collect();
    slots.shuffle(&mut rng);

    // Occurrences are laid out intent by intent and dealt round-robin over
    // the shuffled calls, so one intent never lands twice in a call.
    let mut per_call: Vec<Vec<usize>> = vec![Vec::new(); spec.num_calls];
    let mut j = 0;
    for (intent, planted) in spec.intents.iter().enumerate() {
        for _ in 0..planted.target_frequency {
            per_call[slots[j % spec.num_calls]].push(intent);
            j += 1;
        }
    }

    let mut transcripts = Vec::with_capacity(spec.num_calls);
    let mut noise_questions = 0;
    for (c, intents) in per_call.iter_mut().enumerate() {
        intents.shuffle(&mut rng);
        let mut call = Conversation::new(format!("call-{:05}", c + 1));
        let mut clock = 1_700_000_000_000i64 + (c as i64) * 3_600_000;
        let mut say = |call: &mut Conversation, speaker: Speaker, text: &str| {
            clock += 4_000;
            call.append_turn_at(speaker, text, Some(clock)).expect("non-empty turn");
        };
        say(&mut call, Speaker::Agent, "Thanks for calling, how can I help today?");
        if rng.random_bool(spec.noise_rate) {
            say(&mut call, Speaker::Customer, NOISE[rng.random_range(0..NOISE.len())]);
            say(&mut call, Speaker::Agent, "Of course.");
            noise_questions += 1;
        }
        say(&mut call, Speaker::Customer, OPENERS[rng.random_range(0..OPENERS.len())]);
        for &i in intents.iter() {
            let q = jitter(&spec.intents[i].question, &mut rng);
            say(&mut call, Speaker::Customer, &q);
            say(&mut call, Speaker::Agent, AGENT_REPLIES[rng.random_range(0..AGENT_REPLIES.len())]);
        }
        say(&mut call, Speaker::Agent, "Is there anything else I can do?");
        say(&mut call, Speaker::Customer, "No, that is all. Bye.");
        transcripts.push(call);
    }
    Ok(SynthCorpus {
        transcripts,
        planted: spec.intents.iter().map(|i| i.target_frequency).collect(),
        noise_questions,
    })
}

/// Reads `question,target_frequency` rows with a header line.
pub fn read_intents(path: &Path) -> Result<Vec<PlantedIntent>, SynthError> {
    let err = |message: String| SynthError::Intents {
        path: path.display().to_string(),
        message,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    reader
        .deserialize::<PlantedIntent>()
        .map(|r| r.map_err(|e| err(e.to_string())))
        .collect()
}
