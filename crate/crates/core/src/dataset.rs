//! Labelled feature matrices, defect-aware splitting and SMOTE.
//!
//! A [`FeatureMatrix`] holds one row per source file and one column per
//! feature, plus a binary `Bug` label (1 = defective). CSV is the interchange
//! format: a header line, comma separators, decimal-point reals. A column
//! named `path` is treated as the row identifier rather than a feature.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{self, ChaCha8Rng};

/// Name of the optional row-identifier column.
pub const ID_COLUMN: &str = "path";
pub const DEFAULT_LABEL_COLUMN: &str = "Bug";

/// Numeric table of files × features with a binary defect label.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    feature_names: Vec<String>,
    /// Row-major values, `n_rows * n_features`.
    values: Vec<f64>,
    labels: Vec<u8>,
    source_ids: Option<Vec<String>>,
}

impl FeatureMatrix {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<u8>,
        source_ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let n_features = feature_names.len();
        if n_features == 0 {
            return Err(Error::Data("feature matrix needs at least one feature".into()));
        }
        if rows.is_empty() {
            return Err(Error::Data("feature matrix needs at least one row".into()));
        }
        if rows.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::Data(format!("duplicate feature name '{name}'")));
            }
        }
        if let Some(label) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::Data(format!("label {label} is not 0 or 1")));
        }
        if let Some(ids) = &source_ids {
            if ids.len() != rows.len() {
                return Err(Error::Data(format!(
                    "{} rows but {} source ids",
                    rows.len(),
                    ids.len()
                )));
            }
        }
        let mut values = Vec::with_capacity(rows.len() * n_features);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_features {
                return Err(Error::Data(format!(
                    "row {i} has {} values, expected {n_features}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            feature_names,
            values,
            labels,
            source_ids,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, row: usize) -> u8 {
        self.labels[row]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        let n = self.n_features();
        &self.values[row * n..(row + 1) * n]
    }

    pub fn value(&self, row: usize, feature: usize) -> f64 {
        self.values[row * self.n_features() + feature]
    }

    pub fn source_ids(&self) -> Option<&[String]> {
        self.source_ids.as_deref()
    }

    pub fn column(&self, feature: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.value(r, feature)).collect()
    }

    pub fn count_label(&self, label: u8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn rows(&self) -> impl Iterator<Item = (&[f64], u8)> + '_ {
        (0..self.n_rows()).map(move |r| (self.row(r), self.labels[r]))
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let rows = indices.iter().map(|&i| self.row(i).to_vec()).collect();
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let ids = self
            .source_ids
            .as_ref()
            .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect());
        Self::new(self.feature_names.clone(), rows, labels, ids)
    }

    /// Rows of `self` followed by rows of `other`; feature names must match.
    pub fn concat(&self, other: &FeatureMatrix) -> Result<Self> {
        if self.feature_names != other.feature_names {
            return Err(Error::Data("cannot concatenate matrices with different features".into()));
        }
        let mut out = self.clone();
        out.values.extend_from_slice(&other.values);
        out.labels.extend_from_slice(&other.labels);
        out.source_ids = match (&self.source_ids, &other.source_ids) {
            (Some(a), Some(b)) => Some(a.iter().chain(b).cloned().collect()),
            _ => None,
        };
        Ok(out)
    }

    /// Same rows with the values of one feature replaced.
    pub fn with_column(&self, feature: usize, column: &[f64]) -> Result<Self> {
        if column.len() != self.n_rows() {
            return Err(Error::InvalidArgument("column length mismatch".into()));
        }
        let mut out = self.clone();
        let n = self.n_features();
        for (r, v) in column.iter().enumerate() {
            out.values[r * n + feature] = *v;
        }
        Ok(out)
    }
}

/// Loads a labelled matrix from CSV.
///
/// The label column is removed from the features; every other column except
/// an optional `path` identifier column must be numeric.
pub fn load_feature_matrix(path: &Path, label_column: &str) -> Result<FeatureMatrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_feature_matrix(&text, label_column)
        .map_err(|e| e.context(format!("loading {}", path.display())))
}

pub fn parse_feature_matrix(text: &str, label_column: &str) -> Result<FeatureMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers: Vec<String> = reader.headers()?.iter().map(str::to_owned).collect();
    let mut seen = HashSet::new();
    for h in &headers {
        if !seen.insert(h.as_str()) {
            return Err(Error::Data(format!("duplicate header '{h}'")));
        }
    }
    let label_idx = headers
        .iter()
        .position(|h| h == label_column)
        .ok_or_else(|| Error::Data(format!("label column '{label_column}' not found")))?;
    let id_idx = headers.iter().position(|h| h == ID_COLUMN);
    let feature_cols: Vec<usize> = (0..headers.len())
        .filter(|&c| c != label_idx && Some(c) != id_idx)
        .collect();
    let feature_names = feature_cols.iter().map(|&c| headers[c].clone()).collect();

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut ids = id_idx.map(|_| Vec::new());
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        // data rows are 1-based, after the header line
        let line = r + 2;
        let raw_label = record.get(label_idx).unwrap_or("");
        let label = match raw_label.parse::<f64>() {
            Ok(v) if v == 0.0 => 0,
            Ok(v) if v == 1.0 => 1,
            _ => {
                return Err(Error::Data(format!(
                    "line {line}: label '{raw_label}' in column '{label_column}' is not 0 or 1"
                )))
            }
        };
        let mut row = Vec::with_capacity(feature_cols.len());
        for &c in &feature_cols {
            let cell = record.get(c).unwrap_or("");
            let v = cell.parse::<f64>().map_err(|_| {
                Error::Data(format!(
                    "line {line}, column '{}': non-numeric value '{cell}'",
                    headers[c]
                ))
            })?;
            row.push(v);
        }
        if let (Some(ids), Some(i)) = (ids.as_mut(), id_idx) {
            ids.push(record.get(i).unwrap_or("").to_owned());
        }
        rows.push(row);
        labels.push(label);
    }
    FeatureMatrix::new(feature_names, rows, labels, ids)
}

/// Writes the matrix as CSV: optional `path` column first, then features,
/// then the label column.
pub fn save_feature_matrix(matrix: &FeatureMatrix, path: &Path, label_column: &str) -> Result<()> {
    let text = feature_matrix_to_csv(matrix, label_column)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn feature_matrix_to_csv(matrix: &FeatureMatrix, label_column: &str) -> Result<String> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<&str> = Vec::new();
    if matrix.source_ids.is_some() {
        header.push(ID_COLUMN);
    }
    header.extend(matrix.feature_names.iter().map(String::as_str));
    header.push(label_column);
    writer.write_record(&header)?;
    for r in 0..matrix.n_rows() {
        let mut record: Vec<String> = Vec::with_capacity(header.len());
        if let Some(ids) = &matrix.source_ids {
            record.push(ids[r].clone());
        }
        // `{}` on f64 prints the shortest string that parses back exactly
        record.extend(matrix.row(r).iter().map(|v| format!("{v}")));
        record.push(matrix.labels[r].to_string());
        writer.write_record(&record)?;
    }
    let bytes = writer
        .into_inner()
        .map_err(|e| Error::Data(format!("csv flush failed: {e}")))?;
    String::from_utf8(bytes).map_err(|e| Error::Data(e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub eval_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            eval_fraction: 0.2,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Split {
    pub train: FeatureMatrix,
    pub eval: FeatureMatrix,
    pub used_seed: u64,
    /// Row indices of the input that went to each side, ascending.
    pub train_rows: Vec<usize>,
    pub eval_rows: Vec<usize>,
}

/// Upper bound on resplit attempts; with at least one defective row every
/// attempt succeeds with positive probability, so hitting it means a bug.
const MAX_RESPLITS: u64 = 100_000;

/// Number of evaluation rows for a split of `n` rows.
pub fn eval_size(n: usize, eval_fraction: f64) -> usize {
    (eval_fraction * n as f64).round() as usize
}

/// Shuffled index permutation used by the splitter for `seed`.
///
/// The first [`eval_size`] entries form the evaluation split.
pub fn split_permutation(n: usize, seed: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed));
    order
}

/// Random holdout split, re-drawn with seed, seed+1, ... until the evaluation
/// side contains a defective row.
pub fn resplit_until_defective(matrix: &FeatureMatrix, cfg: SplitConfig) -> Result<Split> {
    if !(cfg.eval_fraction > 0.0 && cfg.eval_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "eval_fraction must be in (0, 1), got {}",
            cfg.eval_fraction
        )));
    }
    if matrix.count_label(1) == 0 {
        return Err(Error::Data(
            "dataset has no defective rows; no split can place one in the evaluation set".into(),
        ));
    }
    let n = matrix.n_rows();
    let n_eval = eval_size(n, cfg.eval_fraction);
    if n_eval == 0 || n_eval >= n {
        return Err(Error::InvalidArgument(format!(
            "eval fraction {} of {n} rows leaves an empty side",
            cfg.eval_fraction
        )));
    }
    for attempt in 0..MAX_RESPLITS {
        let seed = cfg.seed.wrapping_add(attempt);
        let order = split_permutation(n, seed);
        if !order[..n_eval].iter().any(|&i| matrix.label(i) == 1) {
            continue;
        }
        let mut eval_rows = order[..n_eval].to_vec();
        let mut train_rows = order[n_eval..].to_vec();
        eval_rows.sort_unstable();
        train_rows.sort_unstable();
        return Ok(Split {
            train: matrix.select_rows(&train_rows)?,
            eval: matrix.select_rows(&eval_rows)?,
            used_seed: seed,
            train_rows,
            eval_rows,
        });
    }
    Err(Error::Data(format!(
        "no split with a defective evaluation row after {MAX_RESPLITS} seeds"
    )))
}

#[derive(Debug, Serialize, Deserialize)]
struct SplitManifest {
    used_seed: u64,
    eval_fraction: f64,
    train_rows: usize,
    eval_rows: usize,
}

/// Persists a split as `train.csv`, `eval.csv` and `split.json` in `dir`.
pub fn save_split(split: &Split, eval_fraction: f64, dir: &Path, label_column: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_feature_matrix(&split.train, &dir.join("train.csv"), label_column)?;
    save_feature_matrix(&split.eval, &dir.join("eval.csv"), label_column)?;
    let manifest = SplitManifest {
        used_seed: split.used_seed,
        eval_fraction,
        train_rows: split.train.n_rows(),
        eval_rows: split.eval.n_rows(),
    };
    let path = dir.join("split.json");
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Indices (into `points`) of the `k` nearest other points of `points[i]`,
/// nearest first, ties by lower index.
fn nearest_neighbors(points: &[&[f64]], i: usize, k: usize) -> Vec<usize> {
    let mut cands: Vec<(f64, usize)> = (0..points.len())
        .filter(|&j| j != i)
        .map(|j| (squared_distance(points[i], points[j]), j))
        .collect();
    cands.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cands.truncate(k);
    cands.into_iter().map(|(_, j)| j).collect()
}

pub const DEFAULT_SMOTE_K: usize = 5;

/// Balances the classes by synthesising minority rows.
///
/// Each synthetic row is `x + u * (nn - x)` for a minority row `x` (cycled in a
/// shuffled order), one of its `k` nearest minority neighbours `nn` under
/// Euclidean distance in raw feature units, and `u ~ U[0, 1)`. Original rows
/// come first and are left untouched. `k` is clamped to `minority - 1`.
pub fn smote_oversample(train: &FeatureMatrix, k_neighbors: usize, seed: u64) -> Result<FeatureMatrix> {
    if k_neighbors == 0 {
        return Err(Error::InvalidArgument("k_neighbors must be positive".into()));
    }
    let n_pos = train.count_label(1);
    let n_neg = train.count_label(0);
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data("SMOTE needs both classes in the training data".into()));
    }
    if n_pos == n_neg {
        return Ok(train.clone());
    }
    let minority_label = if n_pos < n_neg { 1 } else { 0 };
    let minority: Vec<usize> = (0..train.n_rows())
        .filter(|&r| train.label(r) == minority_label)
        .collect();
    if minority.len() < 2 {
        return Err(Error::Data(
            "minority class has a single row; SMOTE needs a neighbour".into(),
        ));
    }
    let k = k_neighbors.min(minority.len() - 1);
    let n_synthetic = n_pos.max(n_neg) - minority.len();

    let points: Vec<&[f64]> = minority.iter().map(|&r| train.row(r)).collect();
    let neighbors: Vec<Vec<usize>> = (0..points.len())
        .map(|i| nearest_neighbors(&points, i, k))
        .collect();

    let mut rng: ChaCha8Rng = rng::seeded(seed);
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut rng);

    let mut rows: Vec<Vec<f64>> = (0..train.n_rows()).map(|r| train.row(r).to_vec()).collect();
    let mut labels = train.labels().to_vec();
    let mut ids = train.source_ids().map(<[String]>::to_vec);
    for s in 0..n_synthetic {
        let base = order[s % order.len()];
        let nn = neighbors[base][rng.random_range(0..k)];
        let u: f64 = rng.random();
        let (x, y) = (points[base], points[nn]);
        rows.push(x.iter().zip(y).map(|(a, b)| a + u * (b - a)).collect());
        labels.push(minority_label);
        if let Some(ids) = ids.as_mut() {
            ids.push(format!("smote:{}:{}", minority[base], minority[nn]));
        }
    }
    FeatureMatrix::new(train.feature_names.clone(), rows, labels, ids)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix(rows: Vec<Vec<f64>>, labels: Vec<u8>) -> FeatureMatrix {
        let names = (0..rows[0].len()).map(|i| format!("f{i}")).collect();
        FeatureMatrix::new(names, rows, labels, None).unwrap()
    }

    #[test]
    fn parses_simple_csv() {
        let m = parse_feature_matrix("a,b,Bug\n1,2,0\n3,4,1\n", "Bug").unwrap();
        assert_eq!(m.n_features(), 2);
        assert_eq!(m.n_rows(), 2);
        assert_eq!(m.labels(), &[0, 1]);
        assert_eq!(m.row(1), &[3.0, 4.0]);
        assert_eq!(m.feature_names(), &["a".to_string(), "b".to_string()]);
    }

    #[test]
    fn rejects_non_binary_label_with_row() {
        let err = parse_feature_matrix("a,Bug\n1,0\n2,2\n", "Bug").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn rejects_bad_cells_and_headers() {
        let err = parse_feature_matrix("a,b,Bug\n1,x,0\n", "Bug").unwrap_err();
        assert!(err.to_string().contains("column 'b'"));
        assert!(parse_feature_matrix("a,a,Bug\n1,2,0\n", "Bug").is_err());
        assert!(parse_feature_matrix("a,b\n1,2\n", "Bug").is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_feature_matrix(Path::new("/nonexistent/x.csv"), "Bug").unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn path_column_becomes_source_id() {
        let m = parse_feature_matrix("path,a,Bug\nsrc/A.java,1,1\n", "Bug").unwrap();
        assert_eq!(m.n_features(), 1);
        assert_eq!(m.source_ids().unwrap(), &["src/A.java".to_string()]);
    }

    #[test]
    fn resplit_first_seed_when_it_works() {
        let rows = (0..10).map(|i| vec![i as f64]).collect();
        let labels = vec![1, 0, 1, 0, 1, 0, 1, 0, 1, 0];
        let m = matrix(rows, labels);
        let split = resplit_until_defective(&m, SplitConfig { eval_fraction: 0.2, seed: 0 }).unwrap();
        // independent check of what seed 0 does
        let perm = split_permutation(10, 0);
        let mut expected_eval = perm[..2].to_vec();
        expected_eval.sort_unstable();
        let seed0_ok = expected_eval.iter().any(|&i| i % 2 == 0);
        assert!(seed0_ok, "fixture assumes seed 0 already succeeds");
        assert_eq!(split.used_seed, 0);
        assert_eq!(split.eval_rows, expected_eval);
        assert_eq!(split.eval.n_rows(), 2);
        assert!(split.eval.count_label(1) >= 1);
    }

    #[test]
    fn resplit_finds_single_defective_row() {
        let rows = (0..8).map(|i| vec![i as f64]).collect();
        let mut labels = vec![0; 8];
        labels[5] = 1;
        let m = matrix(rows, labels);
        let cfg = SplitConfig { eval_fraction: 0.5, seed: 3 };
        let split = resplit_until_defective(&m, cfg).unwrap();
        let expected_seed = (3u64..)
            .find(|&s| split_permutation(8, s)[..4].contains(&5))
            .unwrap();
        assert_eq!(split.used_seed, expected_seed);
        assert!(split.eval_rows.contains(&5));
        let mut all: Vec<usize> = split.train_rows.iter().chain(&split.eval_rows).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..8).collect::<Vec<_>>());
    }

    #[test]
    fn resplit_rejects_all_benign() {
        let m = matrix(vec![vec![1.0], vec![2.0]], vec![0, 0]);
        assert!(resplit_until_defective(&m, SplitConfig::default()).is_err());
    }

    #[test]
    fn smote_balanced_input_unchanged() {
        let rows = (0..16).map(|i| vec![i as f64, (i * i) as f64]).collect();
        let labels = (0..16).map(|i| (i % 2) as u8).collect();
        let m = matrix(rows, labels);
        assert_eq!(smote_oversample(&m, 5, 1).unwrap(), m);
    }

    #[test]
    fn smote_points_lie_on_segment() {
        let p = vec![1.0, 2.0, -1.0];
        let q = vec![4.0, -2.0, 3.0];
        let mut rows = vec![p.clone(), q.clone()];
        let mut labels = vec![1, 1];
        for i in 0..6 {
            rows.push(vec![i as f64, 0.0, 0.0]);
            labels.push(0);
        }
        let m = matrix(rows, labels);
        let out = smote_oversample(&m, 1, 9).unwrap();
        assert_eq!(out.n_rows(), 12);
        let pq = squared_distance(&p, &q).sqrt();
        for r in 8..12 {
            assert_eq!(out.label(r), 1);
            let row = out.row(r);
            let d = squared_distance(row, &p).sqrt() + squared_distance(row, &q).sqrt();
            assert!((d - pq).abs() < 1e-9);
        }
    }

    #[test]
    fn smote_counts() {
        let rows = (0..8).map(|i| vec![i as f64]).collect();
        let labels = vec![0, 0, 0, 0, 0, 1, 1, 1];
        let out = smote_oversample(&matrix(rows, labels), 5, 0).unwrap();
        assert_eq!(out.n_rows(), 10);
        assert_eq!(out.count_label(0), 5);
        assert_eq!(out.count_label(1), 5);
    }

    #[test]
    fn smote_errors() {
        let single_class = matrix(vec![vec![1.0], vec![2.0]], vec![1, 1]);
        assert!(smote_oversample(&single_class, 5, 0).is_err());
        let lone_minority = matrix(vec![vec![1.0], vec![2.0], vec![3.0]], vec![1, 0, 0]);
        assert!(smote_oversample(&lone_minority, 5, 0).is_err());
    }
}
