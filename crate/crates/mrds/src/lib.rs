//! Data-synthesis toolkit for few-shot dialogue summarization.
//!
//! The pipeline validates, synthesizes, scores, and packages dialogue-summary
//! data around a pluggable text-generation backend:
//!
//! - [`corpus`]: parsing, speaker anonymization/recovery, JSONL persistence
//! - [`format`]: the binary format scorer over dialogues and summaries
//! - [`backend`]: prompt templates, an OpenAI-compatible HTTP client, and a
//!   scripted mock for tests
//! - [`synthesis`]: topic extraction, summary/dialogue synthesis (one-shot
//!   and iterative), content-alignment scoring
//! - [`preference`]: format/content/joint preference pairs and DPO export
//! - [`schedule`]: LR scheduler and stage-transition state machines, training
//!   plan emission
//! - [`eval`]: ROUGE-1/2/L, corpus aggregation, two-sample t-tests
//! - [`config`] / [`pipeline`]: CLI configuration and stage drivers

pub mod backend;
pub mod config;
pub mod corpus;
pub mod eval;
pub mod format;
pub mod par;
pub mod pipeline;
pub mod preference;
pub mod schedule;
pub mod synthesis;
