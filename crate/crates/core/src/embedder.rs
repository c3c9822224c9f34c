//! Feature embeddings from class-conditional statistics and K-means codes.
//!
//! Each feature `i` gets a four-number summary `s_i = (E0, Var0, E1, Var1)`
//! (mean and population variance over benign and over defective rows). The
//! summaries of all features are clustered with K-means once for every `k` in
//! `k_start..=k_end`; feature `i` is then embedded as the concatenation of its
//! one-hot cluster code for each `k`, followed by the raw `s_i`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};
use crate::rng::{self, derive_seed, ChaCha8Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatVector {
    pub mean_benign: f64,
    pub var_benign: f64,
    pub mean_defective: f64,
    pub var_defective: f64,
}

impl StatVector {
    pub fn to_array(&self) -> [f64; 4] {
        [
            self.mean_benign,
            self.var_benign,
            self.mean_defective,
            self.var_defective,
        ]
    }
}

/// Per-feature class-conditional means and population variances.
pub fn statistical_vectors(train: &FeatureMatrix) -> Result<Vec<StatVector>> {
    let n_features = train.n_features();
    let mut sums = [vec![0.0; n_features], vec![0.0; n_features]];
    let mut counts = [0usize; 2];
    for (row, label) in train.rows() {
        let l = label as usize;
        counts[l] += 1;
        for (acc, v) in sums[l].iter_mut().zip(row) {
            *acc += v;
        }
    }
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Data(
            "statistical vectors need both benign and defective rows".into(),
        ));
    }
    let means: Vec<Vec<f64>> = (0..2)
        .map(|l| sums[l].iter().map(|s| s / counts[l] as f64).collect())
        .collect();
    let mut sq = [vec![0.0; n_features], vec![0.0; n_features]];
    for (row, label) in train.rows() {
        let l = label as usize;
        for ((acc, v), m) in sq[l].iter_mut().zip(row).zip(&means[l]) {
            *acc += (v - m) * (v - m);
        }
    }
    Ok((0..n_features)
        .map(|i| StatVector {
            mean_benign: means[0][i],
            var_benign: sq[0][i] / counts[0] as f64,
            mean_defective: means[1][i],
            var_defective: sq[1][i] / counts[1] as f64,
        })
        .collect())
}

pub const KMEANS_MAX_ITER: usize = 300;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: &[Vec<f64>]) -> usize {
    let mut sorted: Vec<&Vec<f64>> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.iter()
            .zip(b.iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    sorted.dedup();
    sorted.len()
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let d = sq_dist(point, centroid);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn kmeans_pp_init(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let mut centroids = vec![points[rng.random_range(0..points.len())].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = None;
            for (i, &d) in d2.iter().enumerate() {
                if d > 0.0 {
                    chosen = Some(i);
                    if target < d {
                        break;
                    }
                    target -= d;
                }
            }
            chosen.expect("positive total has a positive entry")
        } else {
            rng.random_range(0..points.len())
        };
        centroids.push(points[idx].clone());
        for (p, d) in points.iter().zip(d2.iter_mut()) {
            *d = d.min(sq_dist(p, &centroids[centroids.len() - 1]));
        }
    }
    centroids
}

/// Lloyd's algorithm with k-means++ seeding.
///
/// Stops when assignments stop changing or after [`KMEANS_MAX_ITER`] rounds.
/// A cluster that empties out is reseeded with the point farthest from its
/// current centroid (taken from a cluster with more than one member).
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be positive".into()));
    }
    let Some(first) = points.first() else {
        return Err(Error::InvalidArgument("kmeans needs at least one point".into()));
    };
    if points.iter().any(|p| p.len() != first.len()) {
        return Err(Error::InvalidArgument("kmeans points differ in dimension".into()));
    }
    let distinct = count_distinct(points);
    if k > distinct {
        return Err(Error::InvalidArgument(format!(
            "k = {k} exceeds the {distinct} distinct points"
        )));
    }
    let mut rng = rng::seeded(seed);
    let mut centroids = kmeans_pp_init(points, k, &mut rng);
    let mut labels = vec![usize::MAX; points.len()];
    let dim = first.len();

    for _ in 0..KMEANS_MAX_ITER {
        let mut changed = false;
        for (p, label) in points.iter().zip(labels.iter_mut()) {
            let (c, _) = nearest(p, &centroids);
            if *label != c {
                *label = c;
                changed = true;
            }
        }
        let mut sizes = vec![0usize; k];
        for &l in &labels {
            sizes[l] += 1;
        }
        for empty in 0..k {
            if sizes[empty] != 0 {
                continue;
            }
            let far = (0..points.len())
                .filter(|&i| sizes[labels[i]] > 1)
                .map(|i| (i, sq_dist(&points[i], &centroids[labels[i]])))
                .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
                    Some((_, bd)) if bd >= d => best,
                    _ => Some((i, d)),
                })
                .map(|(i, _)| i)
                .expect("k <= n leaves a cluster with several members");
            sizes[labels[far]] -= 1;
            labels[far] = empty;
            sizes[empty] = 1;
            changed = true;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        for (p, &l) in points.iter().zip(&labels) {
            for (s, v) in sums[l].iter_mut().zip(p) {
                *s += v;
            }
        }
        for (c, sum) in sums.into_iter().enumerate() {
            centroids[c] = sum.into_iter().map(|s| s / sizes[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    Ok(labels)
}

/// Within-cluster sum of squared distances to cluster means.
pub fn within_cluster_ss(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let dim = points.first().map_or(0, Vec::len);
    let mut sums = vec![vec![0.0; dim]; k];
    let mut sizes = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        sizes[l] += 1;
        for (s, v) in sums[l].iter_mut().zip(p) {
            *s += v;
        }
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&sizes)
        .map(|(s, &n)| s.into_iter().map(|v| if n > 0 { v / n as f64 } else { 0.0 }).collect())
        .collect();
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, &centroids[l]))
        .sum()
}

/// Mean silhouette coefficient; singleton clusters score 0.
pub fn silhouette(points: &[Vec<f64>], labels: &[usize], k: usize) -> f64 {
    let n = points.len();
    if n < 2 || k < 2 {
        return 0.0;
    }
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        if sizes[labels[i]] <= 1 {
            continue;
        }
        let mut dist_sum = vec![0.0; k];
        for j in 0..n {
            if i != j {
                dist_sum[labels[j]] += sq_dist(&points[i], &points[j]).sqrt();
            }
        }
        let a = dist_sum[labels[i]] / (sizes[labels[i]] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != labels[i] && sizes[c] > 0)
            .map(|c| dist_sum[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let denom = a.max(b);
        if denom > 0.0 && b.is_finite() {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingConfig {
    pub k_start: usize,
    pub k_end: usize,
    pub seed: u64,
    /// Z-score the four statistics across features before clustering.
    pub standardize: bool,
}

impl Default for EmbeddingConfig {
    fn default() -> Self {
        Self {
            k_start: 5,
            k_end: 14,
            seed: 0,
            standardize: true,
        }
    }
}

/// Clustering run for one `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterRun {
    pub k: usize,
    pub seed: u64,
    pub labels: Vec<usize>,
    pub silhouette: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingTable {
    pub vectors: Vec<Vec<f64>>,
    pub dim: usize,
    pub k_start: usize,
    pub k_end: usize,
    pub standardized: bool,
    pub stats: Vec<StatVector>,
    pub runs: Vec<ClusterRun>,
}

/// Width of an embedding for a cluster range: four statistics plus one slot
/// per cluster of every `k`.
pub fn embedding_dim(k_start: usize, k_end: usize) -> usize {
    4 + (k_start..=k_end).sum::<usize>()
}

fn standardize_columns(points: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = points.len() as f64;
    let dim = points.first().map_or(0, Vec::len);
    let mut out = points.to_vec();
    for d in 0..dim {
        let mean = points.iter().map(|p| p[d]).sum::<f64>() / n;
        let var = points.iter().map(|p| (p[d] - mean).powi(2)).sum::<f64>() / n;
        let sd = var.sqrt();
        for p in out.iter_mut() {
            p[d] = if sd > 0.0 { (p[d] - mean) / sd } else { 0.0 };
        }
    }
    out
}

impl EmbeddingTable {
    pub fn n_features(&self) -> usize {
        self.vectors.len()
    }

    pub fn vector(&self, feature: usize) -> &[f64] {
        &self.vectors[feature]
    }

    /// Column names: one per cluster slot (`k5_0`, ...), then the statistics.
    pub fn column_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self
            .runs
            .iter()
            .flat_map(|r| (0..r.k).map(move |j| format!("k{}_{j}", r.k)))
            .collect();
        names.extend(
            ["mean_benign", "var_benign", "mean_defective", "var_defective"].map(String::from),
        );
        names
    }

    /// One row per feature, led by the feature name.
    pub fn to_csv(&self, feature_names: &[String]) -> String {
        let mut out = String::from("feature");
        for c in self.column_names() {
            out.push(',');
            out.push_str(&c);
        }
        out.push('\n');
        for (i, v) in self.vectors.iter().enumerate() {
            let name = feature_names.get(i).map_or("", String::as_str);
            out.push_str(&crate::pheromone::csv_field(name));
            for x in v {
                out.push(',');
                out.push_str(&x.to_string());
            }
            out.push('\n');
        }
        out
    }

    /// Dimension, range, per-k seeds and silhouettes, standardization flag.
    pub fn manifest(&self) -> serde_json::Value {
        serde_json::json!({
            "dim": self.dim,
            "k_start": self.k_start,
            "k_end": self.k_end,
            "standardized": self.standardized,
            "runs": self.runs.iter().map(|r| serde_json::json!({
                "k": r.k,
                "seed": r.seed,
                "silhouette": r.silhouette,
            })).collect::<Vec<_>>(),
        })
    }
}

/// Builds the embedding table from a training matrix.
pub fn build_embeddings(train: &FeatureMatrix, cfg: &EmbeddingConfig) -> Result<EmbeddingTable> {
    if cfg.k_start < 2 || cfg.k_start > cfg.k_end {
        return Err(Error::InvalidArgument(format!(
            "cluster range must satisfy 2 <= k_start <= k_end, got {}..={}",
            cfg.k_start, cfg.k_end
        )));
    }
    if cfg.k_end > train.n_features() {
        return Err(Error::InvalidArgument(format!(
            "k_end = {} exceeds the {} features",
            cfg.k_end,
            train.n_features()
        )));
    }
    let stats = statistical_vectors(train)?;
    let raw: Vec<Vec<f64>> = stats.iter().map(|s| s.to_array().to_vec()).collect();
    let points = if cfg.standardize {
        standardize_columns(&raw)
    } else {
        raw.clone()
    };

    let mut runs = Vec::new();
    for k in cfg.k_start..=cfg.k_end {
        let seed = derive_seed(rng::stream_seed(cfg.seed, Stream::KMeans), k as u64);
        let labels = kmeans(&points, k, seed)
            .map_err(|e| e.context(format!("clustering statistics with k = {k}")))?;
        let silhouette = silhouette(&points, &labels, k);
        runs.push(ClusterRun {
            k,
            seed,
            labels,
            silhouette,
        });
    }

    let dim = embedding_dim(cfg.k_start, cfg.k_end);
    let vectors = (0..train.n_features())
        .map(|i| {
            let mut v = Vec::with_capacity(dim);
            for run in &runs {
                let mut block = vec![0.0; run.k];
                block[run.labels[i]] = 1.0;
                v.extend(block);
            }
            v.extend_from_slice(&raw[i]);
            v
        })
        .collect();
    Ok(EmbeddingTable {
        vectors,
        dim,
        k_start: cfg.k_start,
        k_end: cfg.k_end,
        standardized: cfg.standardize,
        stats,
        runs,
    })
}
