//! Venue recommendation from conversational text, with a template-based
//! audit of unintended demographic bias in the recommendations.

pub mod audit;
pub mod commands;
pub mod config;
pub mod corpus;
pub mod error;
pub mod jsonl;
pub mod manifest;
pub mod pipeline;
pub mod probes;
pub mod ranking;
pub mod recommender;
pub mod rng;
pub mod synthetic;

pub use error::{Error, Result};
