//! Planted-signal datasets for testing and demos.
//!
//! Every feature is standard normal. A fixed set of informative features has
//! its mean shifted by `shift` standard deviations in defective rows; the rest
//! carry no signal. Two "versions" share the informative set and differ only
//! in their rows, mimicking an earlier and a later release of one project.

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub rows: usize,
    pub features: usize,
    pub informative: usize,
    pub shift: f64,
    /// Fraction of defective rows, rounded to a whole count.
    pub defect_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            rows: 600,
            features: 50,
            informative: 10,
            shift: 1.5,
            defect_rate: 0.15,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train_version: FeatureMatrix,
    pub test_version: FeatureMatrix,
    /// Ids of the informative features, ascending.
    pub informative: Vec<usize>,
}

pub fn feature_name(i: usize) -> String {
    format!("f{i:02}")
}

fn sample_version(cfg: &SyntheticConfig, informative: &[usize], seed: u64) -> Result<FeatureMatrix> {
    let mut rng = stream_rng(seed, Stream::Synthetic);
    let n_def = (cfg.defect_rate * cfg.rows as f64).round() as usize;
    let mut labels: Vec<u8> = (0..cfg.rows).map(|i| u8::from(i < n_def)).collect();
    labels.shuffle(&mut rng);
    let mut is_informative = vec![false; cfg.features];
    for &f in informative {
        is_informative[f] = true;
    }
    let rows = labels
        .iter()
        .map(|&y| {
            (0..cfg.features)
                .map(|f| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    if is_informative[f] && y == 1 {
                        z + cfg.shift
                    } else {
                        z
                    }
                })
                .collect()
        })
        .collect();
    let names = (0..cfg.features).map(feature_name).collect();
    FeatureMatrix::new(names, rows, labels, None)
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    if cfg.informative > cfg.features || cfg.features == 0 || cfg.rows < 2 {
        return Err(Error::InvalidArgument(format!(
            "need rows >= 2 and informative <= features, got {cfg:?}"
        )));
    }
    if !(cfg.defect_rate > 0.0 && cfg.defect_rate < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "defect_rate must be in (0, 1), got {}",
            cfg.defect_rate
        )));
    }
    let mut rng = stream_rng(cfg.seed, Stream::Synthetic);
    let mut informative = sample(&mut rng, cfg.features, cfg.informative).into_vec();
    informative.sort_unstable();
    Ok(SyntheticData {
        train_version: sample_version(cfg, &informative, derive_seed(cfg.seed, 1))?,
        test_version: sample_version(cfg, &informative, derive_seed(cfg.seed, 2))?,
        informative,
    })
}
