//! Turn raw documents into grounded multi-turn dialogue datasets, and
//! measure how good the result is.
//!
//! The pipeline: ingest documents ([`corpus`]), drive a chat backend
//! through a per-turn plan → key-phrase → span-grounding → write loop
//! ([`engine`], [`span`], [`gateway`]), score the output with a judge
//! backend ([`evaluator`]), aggregate and correlate scores ([`analytics`]),
//! and export training data with deterministic splits ([`dataset`]).

pub mod analytics;
pub mod corpus;
pub mod dataset;
pub mod engine;
pub mod error;
pub mod evaluator;
pub mod gateway;
pub mod io;
pub mod prompts;
pub mod span;

pub use error::{Error, Result};
