pub mod backends;
pub mod candidate;
pub mod config;
pub mod decision;
pub mod decompose;
pub mod error;
pub mod gateway;
pub mod ingest;
pub mod orchestrator;
pub mod prompts;
pub mod retrieval;

pub use error::{HmragError, Result};
