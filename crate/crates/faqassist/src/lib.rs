pub mod cli;
pub mod config;
pub mod embedding;
pub mod engine;
pub mod llm;
pub mod mining;
pub mod rag;
mod retry;
pub mod service;
pub mod simulator;
pub mod store;
pub mod transcript;

pub use faqassist_core as algo;
