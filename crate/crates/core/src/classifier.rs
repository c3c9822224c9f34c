//! The classifier oracle that turns a feature subset into a score.
//!
//! The default model is L2-regularised logistic regression on z-scored
//! columns, fit by full-batch gradient descent from zero weights. It has no
//! random state, so the same data and subset always give the same weights.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    #[default]
    LogisticRegression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierConfig {
    pub kind: ClassifierKind,
    pub l2: f64,
    pub steps: usize,
    pub learning_rate: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            kind: ClassifierKind::LogisticRegression,
            l2: 1e-3,
            steps: 500,
            learning_rate: 0.1,
        }
    }
}

/// Which evaluation score is used as the reward signal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMetric {
    #[default]
    F1,
    Auc,
    Accuracy,
}

impl RewardMetric {
    pub fn score(self, m: &EvalMetrics) -> f64 {
        match self {
            RewardMetric::F1 => m.f1,
            // an eval split without positives cannot rank; score it as chance
            RewardMetric::Auc => m.auc.unwrap_or(0.5),
            RewardMetric::Accuracy => m.accuracy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when the evaluation data holds a single class.
    pub auc: Option<f64>,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn from_predictions(labels: &[u8], predicted: &[bool]) -> Self {
        let mut c = Confusion::default();
        for (&l, &p) in labels.iter().zip(predicted) {
            match (l == 1, p) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
                (true, false) => c.fn_ += 1,
            }
        }
        c
    }

    pub fn precision(&self) -> f64 {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.tp + self.tn, self.tp + self.tn + self.fp + self.fn_)
    }
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Area under the ROC curve via the Mann-Whitney statistic.
///
/// Equals `(concordant + 0.5 * tied) / (n_pos * n_neg)` over all
/// positive/negative pairs, computed from average ranks in `O(n log n)`.
pub fn auc(labels: &[u8], scores: &[f64]) -> Result<f64> {
    if labels.len() != scores.len() {
        return Err(Error::InvalidArgument("labels and scores differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // twice the rank sum keeps tied average ranks integral
    let mut rank_sum_x2: u64 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j+1 averaged, doubled
        let avg_x2 = (i + 1 + j + 1) as u64;
        for &idx in &order[i..=j] {
            if labels[idx] == 1 {
                rank_sum_x2 += avg_x2;
            }
        }
        i = j + 1;
    }
    let min_x2 = (n_pos * (n_pos + 1)) as u64;
    // u_x2 = 2U = 2 * concordant + tied
    let u_x2 = rank_sum_x2 - min_x2;
    Ok(u_x2 as f64 * 0.5 / (n_pos as f64 * n_neg as f64))
}

/// Fitted model restricted to a feature subset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedClassifier {
    /// One weight per subset feature, then the bias.
    pub weights: Vec<f64>,
    pub feature_subset: Vec<usize>,
    pub means: Vec<f64>,
    pub sds: Vec<f64>,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn check_subset(subset: &[usize], n_features: usize) -> Result<()> {
    if subset.is_empty() {
        return Err(Error::InvalidArgument("feature subset is empty".into()));
    }
    let mut seen = HashSet::new();
    for &f in subset {
        if f >= n_features {
            return Err(Error::InvalidArgument(format!(
                "feature id {f} out of range for {n_features} features"
            )));
        }
        if !seen.insert(f) {
            return Err(Error::InvalidArgument(format!("feature id {f} repeated in subset")));
        }
    }
    Ok(())
}

/// Row-major design matrix of the subset columns, z-scored with the given
/// statistics.
fn design(data: &FeatureMatrix, subset: &[usize], means: &[f64], sds: &[f64]) -> Vec<f64> {
    let m = subset.len();
    let mut x = Vec::with_capacity(data.n_rows() * m);
    for r in 0..data.n_rows() {
        let row = data.row(r);
        for j in 0..m {
            x.push((row[subset[j]] - means[j]) / sds[j]);
        }
    }
    x
}

pub fn train_classifier(
    train: &FeatureMatrix,
    subset: &[usize],
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier> {
    check_subset(subset, train.n_features())?;
    let n = train.n_rows();
    let n_pos = train.count_label(1);
    if n_pos == 0 || n_pos == n {
        return Err(Error::Data("classifier training data holds a single class".into()));
    }
    let m = subset.len();
    let mut means = vec![0.0; m];
    let mut sds = vec![0.0; m];
    for (j, &f) in subset.iter().enumerate() {
        let mean = (0..n).map(|r| train.value(r, f)).sum::<f64>() / n as f64;
        let var = (0..n).map(|r| (train.value(r, f) - mean).powi(2)).sum::<f64>() / n as f64;
        means[j] = mean;
        // zero-variance columns pass through unscaled
        sds[j] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    let x = design(train, subset, &means, &sds);
    let y: Vec<f64> = train.labels().iter().map(|&l| l as f64).collect();

    let ClassifierConfig {
        kind: ClassifierKind::LogisticRegression,
        l2,
        steps,
        learning_rate,
    } = *cfg;
    let mut w = vec![0.0; m];
    let mut b = 0.0;
    let mut grad = vec![0.0; m];
    let inv_n = 1.0 / n as f64;
    for _ in 0..steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut grad_b = 0.0;
        for (row, &target) in x.chunks_exact(m).zip(&y) {
            let z = b + row.iter().zip(&w).map(|(a, c)| a * c).sum::<f64>();
            let residual = sigmoid(z) - target;
            grad_b += residual;
            for (g, v) in grad.iter_mut().zip(row) {
                *g += residual * v;
            }
        }
        for (wj, g) in w.iter_mut().zip(&grad) {
            *wj -= learning_rate * (g * inv_n + l2 * *wj);
        }
        b -= learning_rate * grad_b * inv_n;
    }
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(Error::Numerical("logistic regression weights diverged".into()));
    }
    w.push(b);
    Ok(TrainedClassifier {
        weights: w,
        feature_subset: subset.to_vec(),
        means,
        sds,
    })
}

impl TrainedClassifier {
    /// Probability of the defective class for each row.
    pub fn predict_proba(&self, data: &FeatureMatrix) -> Result<Vec<f64>> {
        if let Some(&f) = self.feature_subset.iter().find(|&&f| f >= data.n_features()) {
            return Err(Error::InvalidArgument(format!(
                "feature id {f} missing from evaluation data"
            )));
        }
        let m = self.feature_subset.len();
        let x = design(data, &self.feature_subset, &self.means, &self.sds);
        let bias = self.weights[m];
        Ok(x
            .chunks_exact(m)
            .map(|row| sigmoid(bias + row.iter().zip(&self.weights).map(|(a, c)| a * c).sum::<f64>()))
            .collect())
    }
}

/// Scores `data` and computes metrics with the defective class as positive.
/// Hard predictions use a 0.5 threshold.
pub fn evaluate(clf: &TrainedClassifier, data: &FeatureMatrix) -> Result<EvalMetrics> {
    let scores = clf.predict_proba(data)?;
    Ok(metrics_from_scores(data.labels(), &scores))
}

pub fn metrics_from_scores(labels: &[u8], scores: &[f64]) -> EvalMetrics {
    let predicted: Vec<bool> = scores.iter().map(|&s| s >= 0.5).collect();
    let c = Confusion::from_predictions(labels, &predicted);
    EvalMetrics {
        precision: c.precision(),
        recall: c.recall(),
        f1: c.f1(),
        auc: auc(labels, scores).ok(),
        accuracy: c.accuracy(),
    }
}

/// Train-then-evaluate bundle used as the environment's reward function.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct Oracle {
    pub classifier: ClassifierConfig,
    pub metric: RewardMetric,
}

impl Oracle {
    /// Metrics of a classifier trained on `subset` of `train`, scored on `eval`.
    pub fn assess(
        &self,
        train: &FeatureMatrix,
        eval: &FeatureMatrix,
        subset: &[usize],
    ) -> Result<EvalMetrics> {
        let clf = train_classifier(train, subset, &self.classifier)?;
        evaluate(&clf, eval)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn brute_auc(labels: &[u8], scores: &[f64]) -> f64 {
        let mut num = 0.0;
        let mut pairs = 0.0;
        for i in 0..labels.len() {
            for j in 0..labels.len() {
                if labels[i] == 1 && labels[j] == 0 {
                    pairs += 1.0;
                    if scores[i] > scores[j] {
                        num += 1.0;
                    } else if scores[i] == scores[j] {
                        num += 0.5;
                    }
                }
            }
        }
        num / pairs
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[1, 0, 1], &[0.9, 0.8, 0.3]).unwrap(), 0.5);
        assert_eq!(auc(&[0, 0, 1, 1], &[0.1, 0.2, 0.3, 0.4]).unwrap(), 1.0);
        assert_eq!(auc(&[0, 1, 0, 1], &[0.5; 4]).unwrap(), 0.5);
        assert!(auc(&[1, 1], &[0.1, 0.2]).is_err());
        let labels = [1, 0, 0, 1, 1, 0, 1];
        let scores = [0.3, 0.3, 0.1, 0.9, 0.3, 0.7, 0.2];
        assert_eq!(auc(&labels, &scores).unwrap(), brute_auc(&labels, &scores));
    }

    #[test]
    fn confusion_formulas() {
        let c = Confusion { tp: 2, fp: 1, tn: 5, fn_: 1 };
        assert!((c.precision() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.recall() - 2.0 / 3.0).abs() < 1e-15);
        assert!((c.f1() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(Confusion::default().f1(), 0.0);
    }

    fn separable() -> FeatureMatrix {
        let rows = (0..20).map(|i| vec![if i % 2 == 0 { -1.0 } else { 1.0 }, 3.0]).collect();
        let labels = (0..20).map(|i| (i % 2) as u8).collect();
        FeatureMatrix::new(vec!["x".into(), "const".into()], rows, labels, None).unwrap()
    }

    #[test]
    fn separable_fits_perfectly() {
        let m = separable();
        let clf = train_classifier(&m, &[0], &ClassifierConfig::default()).unwrap();
        let metrics = evaluate(&clf, &m).unwrap();
        assert_eq!(metrics.accuracy, 1.0);
        assert_eq!(metrics.f1, 1.0);
        assert_eq!(metrics.precision, 1.0);
        assert_eq!(metrics.recall, 1.0);
        assert_eq!(metrics.auc, Some(1.0));
        // zero-variance column passes through with sd 1
        let clf2 = train_classifier(&m, &[1, 0], &ClassifierConfig::default()).unwrap();
        assert_eq!(clf2.sds[0], 1.0);
        assert_eq!(clf2.weights.len(), 3);
    }

    #[test]
    fn subset_contract() {
        let m = separable();
        let cfg = ClassifierConfig::default();
        assert!(train_classifier(&m, &[], &cfg).is_err());
        assert!(train_classifier(&m, &[0, 0], &cfg).is_err());
        assert!(train_classifier(&m, &[2], &cfg).is_err());
    }

    #[test]
    fn retraining_is_bit_identical() {
        let m = separable();
        let a = train_classifier(&m, &[0, 1], &ClassifierConfig::default()).unwrap();
        let b = train_classifier(&m, &[0, 1], &ClassifierConfig::default()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn eval_without_positives_has_no_auc() {
        let m = separable();
        let negatives: Vec<usize> = (0..20).filter(|i| i % 2 == 0).collect();
        let neg = m.select_rows(&negatives).unwrap();
        let clf = train_classifier(&m, &[0], &ClassifierConfig::default()).unwrap();
        let metrics = evaluate(&clf, &neg).unwrap();
        assert_eq!(metrics.auc, None);
        assert_eq!(metrics.f1, 0.0);
        assert_eq!(metrics.accuracy, 1.0);
    }
}
