//! Feature selection for file-level software defect prediction.
//!
//! A PPO agent composes feature subsets one feature at a time. Each addition is
//! scored by a classifier trained on the chosen columns, and the change in the
//! evaluation score is the reward. Features are represented either as one-hot
//! vectors (`Mode::Simple`) or in a statistical embedding space built from
//! per-class moments and K-means cluster codes (`Mode::Custom`). A pheromone
//! table accumulates the rewards each feature earned and can seed new episodes
//! or pick the final subset directly.
//!
//! Crate layout:
//!
//! - [`dataset`]: CSV loading, defect-aware splitting, SMOTE.
//! - [`code_metrics`]: the 20 static source metrics.
//! - [`embedder`]: statistical vectors, K-means, feature embeddings.
//! - [`pheromone`]: the per-feature reward ledger.
//! - [`classifier`]: logistic-regression oracle and evaluation metrics.
//! - [`environment`]: episode state, action resolution, TD rewards.
//! - [`agent`]: autodiff tape, transformer actor/critic, PPO.
//! - [`runner`]: experiment orchestration, test-time selection, sweeps.
//! - [`report`]: run artifacts (CSV, JSON, SVG).
//! - [`stats`]: the two-sample t-test.
//! - [`synthetic`]: planted-signal datasets.

pub mod agent;
pub mod classifier;
pub mod code_metrics;
pub mod dataset;
pub mod embedder;
pub mod environment;
pub mod error;
pub mod pheromone;
pub mod report;
pub mod rng;
pub mod runner;
pub mod stats;
pub mod synthetic;

pub use error::{Error, Result};
