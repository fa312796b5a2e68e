//! Semantic keyword expansion for sponsored search: embedding ingestion,
//! exact k-NN, clustering with per-cluster distance thresholds, filtered
//! expansion, relevance scoring with stacked boosted trees, and a broad-match
//! runtime over atomically refreshed snapshots.

pub mod cli;
pub mod clustering;
pub mod config;
pub mod embedding;
pub mod error;
pub mod expansion;
pub mod features;
pub mod index;
pub mod matching;
pub mod relevance;
pub mod report;
pub mod rng;
pub mod service;
pub mod synth;
pub mod text;
pub mod thresholds;

pub use error::{Error, Result};
