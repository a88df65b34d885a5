//! The three retrieval agents.

pub mod graph;
pub mod vector;
pub mod web;
