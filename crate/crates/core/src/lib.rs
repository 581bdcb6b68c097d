//! Pure algorithms behind the live FAQ assistant.
//!
//! Everything in this crate works on owned or borrowed in-memory data and
//! needs only an allocator: the conversation model and rolling windows, vector
//! similarity, the n-gram hashing embedder, seeded k-means, the list-output
//! parser used on model completions, suggestion deduplication, representative
//! merging for the mining pipeline, and nearest-rank percentiles.
//!
//! IO, async providers, persistence and networking live in the `faqassist`
//! crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod conversation;
pub mod dedup;
pub mod kmeans;
pub mod list_output;
pub mod ngram;
pub mod representative;
pub mod stats;
pub mod trigger;
pub mod vector;

pub use conversation::{Conversation, ConversationError, Speaker, Turn, TurnWindow};
pub use kmeans::{kmeans, KMeansError, KMeansParams, KMeansResult};
pub use list_output::parse_list;
pub use ngram::embed_ngrams;
pub use representative::{MergeGroup, Representative};
pub use vector::{cosine, Vector, VectorError};
