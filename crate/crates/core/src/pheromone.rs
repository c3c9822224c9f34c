//! Per-feature reward ledger inspired by ant-colony pheromone trails.
//!
//! For every feature the table keeps the sum of TD rewards it earned and the
//! number of times it was selected. The ratio of the two is the feature's
//! pheromone level. There is no evaporation.

use std::fmt::Write as _;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;

pub const DEFAULT_TEMPERATURE: f64 = 0.05;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PheromoneTable {
    cum_reward: Vec<f64>,
    count: Vec<u64>,
}

impl PheromoneTable {
    pub fn new(n_features: usize) -> Result<Self> {
        if n_features == 0 {
            return Err(Error::InvalidArgument("pheromone table needs at least one feature".into()));
        }
        Ok(Self {
            cum_reward: vec![0.0; n_features],
            count: vec![0; n_features],
        })
    }

    pub fn len(&self) -> usize {
        self.count.len()
    }

    pub fn is_empty(&self) -> bool {
        self.count.is_empty()
    }

    fn check(&self, feature: usize) -> Result<()> {
        if feature >= self.len() {
            return Err(Error::InvalidArgument(format!(
                "feature id {feature} out of range for {} features",
                self.len()
            )));
        }
        Ok(())
    }

    /// `(cum_reward, count)` of a feature.
    pub fn entry(&self, feature: usize) -> Result<(f64, u64)> {
        self.check(feature)?;
        Ok((self.cum_reward[feature], self.count[feature]))
    }

    pub fn update(&mut self, feature: usize, td_reward: f64) -> Result<()> {
        self.check(feature)?;
        self.cum_reward[feature] += td_reward;
        self.count[feature] += 1;
        Ok(())
    }

    /// Pheromone level `cum_reward / count`; `None` for never-selected features.
    pub fn average_level(&self, feature: usize) -> Result<Option<f64>> {
        self.check(feature)?;
        Ok(self.level(feature))
    }

    fn level(&self, feature: usize) -> Option<f64> {
        (self.count[feature] > 0).then(|| self.cum_reward[feature] / self.count[feature] as f64)
    }

    pub fn total_reward(&self) -> f64 {
        self.cum_reward.iter().sum()
    }

    pub fn total_count(&self) -> u64 {
        self.count.iter().sum()
    }

    /// Draws `count` distinct features for seeding an episode.
    ///
    /// Features with evidence are drawn without replacement, each draw with
    /// probability proportional to `exp(level / temperature)` where levels are
    /// min-max normalised over the visited features. Once those run out the
    /// remainder comes uniformly from never-selected features.
    pub fn sample_seed_features(
        &self,
        count: usize,
        temperature: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Vec<usize>> {
        if count > self.len() {
            return Err(Error::InvalidArgument(format!(
                "cannot sample {count} distinct features from {}",
                self.len()
            )));
        }
        if temperature <= 0.0 || !temperature.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "temperature must be positive, got {temperature}"
            )));
        }
        let mut visited: Vec<(usize, f64)> = (0..self.len())
            .filter_map(|i| self.level(i).map(|l| (i, l)))
            .collect();
        let mut unvisited: Vec<usize> = (0..self.len()).filter(|&i| self.count[i] == 0).collect();

        let (lo, hi) = visited
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &(_, l)| (lo.min(l), hi.max(l)));
        let span = hi - lo;
        // weights relative to the best feature keep exp() in range
        let mut weights: Vec<f64> = visited
            .iter()
            .map(|&(_, l)| {
                let norm = if span > 0.0 { (l - lo) / span } else { 1.0 };
                ((norm - 1.0) / temperature).exp()
            })
            .collect();

        let mut chosen = Vec::with_capacity(count);
        while chosen.len() < count && !visited.is_empty() {
            let total: f64 = weights.iter().sum();
            let mut target = rng.random::<f64>() * total;
            let mut pick = weights.len() - 1;
            for (j, &w) in weights.iter().enumerate() {
                if target < w {
                    pick = j;
                    break;
                }
                target -= w;
            }
            chosen.push(visited.remove(pick).0);
            weights.remove(pick);
        }
        while chosen.len() < count {
            let j = rng.random_range(0..unvisited.len());
            chosen.push(unvisited.swap_remove(j));
        }
        Ok(chosen)
    }

    /// Ids of the `k` highest levels, never-selected features last, ties by id.
    pub fn top_k(&self, k: usize) -> Result<Vec<usize>> {
        if k > self.len() {
            return Err(Error::InvalidArgument(format!(
                "top {k} requested from {} features",
                self.len()
            )));
        }
        let mut ids: Vec<usize> = (0..self.len()).collect();
        let key = |i: usize| self.level(i).unwrap_or(f64::NEG_INFINITY);
        ids.sort_by(|&a, &b| key(b).total_cmp(&key(a)).then(a.cmp(&b)));
        ids.truncate(k);
        Ok(ids)
    }

    /// CSV with columns `feature_id,name,cum_reward,count,average`; the average
    /// is empty for never-selected features.
    pub fn to_csv(&self, names: &[String]) -> String {
        let mut out = String::from("feature_id,name,cum_reward,count,average\n");
        for i in 0..self.len() {
            let name = names.get(i).map_or("", String::as_str);
            let avg = self.level(i).map(|a| format!("{a}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{i},{},{},{},{avg}",
                csv_field(name),
                self.cum_reward[i],
                self.count[i]
            );
        }
        out
    }
}

pub(crate) fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}
