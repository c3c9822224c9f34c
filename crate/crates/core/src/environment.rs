//! Episode state, action resolution and TD rewards.
//!
//! An episode builds a subset of exactly `capacity` features. With seeding
//! on, the first `capacity / 3` slots are drawn from the pheromone table and
//! the agent fills the rest; otherwise the agent fills every slot. Each agent
//! step appends one feature, retrains the oracle on the subset and is
//! rewarded with the change in the oracle's score.

use serde::{Deserialize, Serialize};

use crate::agent::Tensor;
use crate::classifier::{EvalMetrics, Oracle};
use crate::dataset::FeatureMatrix;
use crate::embedder::EmbeddingTable;
use crate::error::{Error, Result};
use crate::pheromone::PheromoneTable;
use crate::rng::ChaCha8Rng;

/// How features are presented to the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    /// One-hot feature vectors; actions are per-feature scores.
    Simple,
    /// Statistical embeddings; actions are points in embedding space.
    #[default]
    Custom,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Simple => "simple",
            Mode::Custom => "custom",
        })
    }
}

/// Per-feature vectors plus the rule that maps an action to a feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSpace {
    mode: Mode,
    vectors: Vec<Vec<f64>>,
}

impl FeatureSpace {
    pub fn simple(n_features: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidArgument("feature space needs at least one feature".into()));
        }
        let vectors = (0..n_features)
            .map(|i| {
                let mut v = vec![0.0; n_features];
                v[i] = 1.0;
                v
            })
            .collect();
        Ok(Self { mode: Mode::Simple, vectors })
    }

    pub fn custom(embeddings: &EmbeddingTable) -> Result<Self> {
        Self::from_vectors(embeddings.vectors.clone())
    }

    /// Custom-mode space over arbitrary vectors of equal length.
    pub fn from_vectors(vectors: Vec<Vec<f64>>) -> Result<Self> {
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 || vectors.iter().any(|v| v.len() != dim) {
            return Err(Error::InvalidArgument(
                "feature vectors must be non-empty and of equal length".into(),
            ));
        }
        Ok(Self { mode: Mode::Custom, vectors })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn n_features(&self) -> usize {
        self.vectors.len()
    }

    /// Slot width, which is also the action width.
    pub fn dim(&self) -> usize {
        self.vectors[0].len()
    }

    pub fn vector(&self, feature: usize) -> &[f64] {
        &self.vectors[feature]
    }

    /// Maps an action to an unselected feature.
    ///
    /// Custom mode picks the nearest vector in Euclidean distance, Simple mode
    /// the highest score. Ties go to the lowest id.
    pub fn resolve(&self, action: &[f64], selected: &[usize]) -> Result<usize> {
        if action.len() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "action has length {}, expected {}",
                action.len(),
                self.dim()
            )));
        }
        if action.iter().any(|a| !a.is_finite()) {
            return Err(Error::Numerical("action contains non-finite values".into()));
        }
        let mut taken = vec![false; self.n_features()];
        for &f in selected {
            taken[f] = true;
        }
        let candidates = (0..self.n_features()).filter(|&i| !taken[i]);
        let best = match self.mode {
            Mode::Custom => candidates
                .map(|i| (i, squared_distance(action, &self.vectors[i])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd <= d => best,
                    _ => Some((i, d)),
                }),
            Mode::Simple => candidates
                .map(|i| (i, action[i]))
                .fold(None, |best: Option<(usize, f64)>, (i, s)| match best {
                    Some((_, bs)) if bs >= s => best,
                    _ => Some((i, s)),
                }),
        };
        best.map(|(i, _)| i)
            .ok_or_else(|| Error::InvalidArgument("every feature is already selected".into()))
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeState {
    pub capacity: usize,
    /// `capacity × dim`; rows past `selected.len()` are zero.
    pub slots: Tensor,
    pub selected: Vec<usize>,
    pub seeded_count: usize,
    /// Oracle score of the subset before the first agent step.
    pub initial_score: f64,
    /// Score after the latest step (`CR_{t-1}` for the next one).
    pub score: f64,
}

impl EpisodeState {
    pub fn filled(&self) -> usize {
        self.selected.len()
    }

    pub fn is_done(&self) -> bool {
        self.selected.len() == self.capacity
    }

    /// Agent steps left in the episode.
    pub fn remaining(&self) -> usize {
        self.capacity - self.selected.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub feature: usize,
    pub td_reward: f64,
    pub score: f64,
    pub done: bool,
    pub metrics: EvalMetrics,
}

/// Number of pheromone-seeded slots for a subset of size `capacity`.
pub fn seeded_count(capacity: usize) -> usize {
    capacity / 3
}

/// Agent steps in one episode.
pub fn steps_per_episode(capacity: usize, seeded: bool) -> usize {
    if seeded {
        capacity - seeded_count(capacity)
    } else {
        capacity
    }
}

#[derive(Debug, Clone)]
pub struct Environment {
    pub space: FeatureSpace,
    pub train: FeatureMatrix,
    pub eval: FeatureMatrix,
    pub oracle: Oracle,
    pub capacity: usize,
    /// Seed episodes from the pheromone table.
    pub seeded: bool,
    pub temperature: f64,
}

impl Environment {
    pub fn new(
        space: FeatureSpace,
        train: FeatureMatrix,
        eval: FeatureMatrix,
        oracle: Oracle,
        capacity: usize,
    ) -> Result<Self> {
        if train.n_features() != space.n_features() || eval.n_features() != space.n_features() {
            return Err(Error::InvalidArgument(format!(
                "feature space has {} features but train/eval have {}/{}",
                space.n_features(),
                train.n_features(),
                eval.n_features()
            )));
        }
        if capacity == 0 || capacity > space.n_features() {
            return Err(Error::InvalidArgument(format!(
                "subset size {capacity} must be in 1..={}",
                space.n_features()
            )));
        }
        Ok(Self {
            space,
            train,
            eval,
            oracle,
            capacity,
            seeded: false,
            temperature: crate::pheromone::DEFAULT_TEMPERATURE,
        })
    }

    pub fn with_seeding(mut self, seeded: bool, temperature: f64) -> Self {
        self.seeded = seeded;
        self.temperature = temperature;
        self
    }

    pub fn steps_per_episode(&self) -> usize {
        steps_per_episode(self.capacity, self.seeded)
    }

    /// Starts an episode. Seeded slots take no pheromone update; the
    /// baseline score is the oracle score of the seeded subset, or 0 if empty.
    pub fn reset(&self, table: &PheromoneTable, rng: &mut ChaCha8Rng) -> Result<EpisodeState> {
        let mut state = EpisodeState {
            capacity: self.capacity,
            slots: Tensor::zeros(self.capacity, self.space.dim()),
            selected: Vec::with_capacity(self.capacity),
            seeded_count: 0,
            initial_score: 0.0,
            score: 0.0,
        };
        if self.seeded {
            let seeds = table.sample_seed_features(seeded_count(self.capacity), self.temperature, rng)?;
            for f in seeds {
                self.place(&mut state, f);
            }
            state.seeded_count = state.selected.len();
            if !state.selected.is_empty() {
                let m = self
                    .oracle
                    .assess(&self.train, &self.eval, &state.selected)
                    .map_err(|e| e.context("scoring seeded subset"))?;
                state.initial_score = self.oracle.metric.score(&m);
                state.score = state.initial_score;
            }
        }
        Ok(state)
    }

    fn place(&self, state: &mut EpisodeState, feature: usize) {
        let dim = self.space.dim();
        let row = state.selected.len();
        state.slots.data[row * dim..(row + 1) * dim].copy_from_slice(self.space.vector(feature));
        state.selected.push(feature);
    }

    /// Applies one agent action. With `table` given, the resolved feature's
    /// pheromone is updated with the TD reward.
    pub fn step(
        &self,
        state: &mut EpisodeState,
        action: &[f64],
        table: Option<&mut PheromoneTable>,
    ) -> Result<StepOutcome> {
        if state.is_done() {
            return Err(Error::InvalidArgument("step called on a finished episode".into()));
        }
        let feature = self.space.resolve(action, &state.selected)?;
        self.place(state, feature);
        let metrics = self
            .oracle
            .assess(&self.train, &self.eval, &state.selected)
            .map_err(|e| e.context(format!("scoring subset after adding feature {feature}")))?;
        let score = self.oracle.metric.score(&metrics);
        let td_reward = score - state.score;
        state.score = score;
        if let Some(table) = table {
            table.update(feature, td_reward)?;
        }
        Ok(StepOutcome {
            feature,
            td_reward,
            score,
            done: state.is_done(),
            metrics,
        })
    }
}
