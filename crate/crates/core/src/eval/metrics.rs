//! Classification metrics and class-balancing sample weights.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class_accuracy: Vec<Option<f64>>,
    /// Rank-statistic AUC of the class-1 score; binary tasks only.
    pub auc: Option<f64>,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub n_test: usize,
}

impl MetricsReport {
    /// Unweighted mean of the per-class accuracies of classes present.
    pub fn balanced_accuracy(&self) -> f64 {
        let v: Vec<f64> = self.per_class_accuracy.iter().flatten().copied().collect();
        v.iter().sum::<f64>() / v.len().max(1) as f64
    }
}

/// Builds a report from true labels, predicted labels and, for binary tasks,
/// scores for class 1.
pub fn compute_metrics(labels: &[usize], predictions: &[usize], scores: Option<&[f64]>, n_classes: usize) -> Result<MetricsReport> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    if labels.len() != predictions.len() {
        return Err(Error::Shape { expected: format!("{} predictions", labels.len()), actual: predictions.len().to_string() });
    }
    let mut confusion = vec![vec![0usize; n_classes]; n_classes];
    for (&t, &p) in labels.iter().zip(predictions) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::InvalidArgument(format!("label {t} or prediction {p} outside {n_classes} classes")));
        }
        confusion[t][p] += 1;
    }
    let correct: usize = (0..n_classes).map(|c| confusion[c][c]).sum();
    let per_class_accuracy = confusion
        .iter()
        .enumerate()
        .map(|(c, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[c] as f64 / n as f64)
        })
        .collect();
    let auc = match (n_classes, scores) {
        (2, Some(s)) => {
            let positive: Vec<bool> = labels.iter().map(|&l| l == 1).collect();
            auc_midrank(s, &positive).ok()
        }
        _ => None,
    };
    Ok(MetricsReport { accuracy: correct as f64 / labels.len() as f64, per_class_accuracy, auc, confusion, n_test: labels.len() })
}

/// Mann-Whitney AUC with tied scores assigned their average rank.
pub fn auc_midrank(scores: &[f64], positive: &[bool]) -> Result<f64> {
    if scores.len() != positive.len() {
        return Err(Error::Shape { expected: format!("{} flags", scores.len()), actual: positive.len().to_string() });
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::NonFinite("scores".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * mid;
        i = j + 1;
    }
    let u = rank_sum_pos - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Per-sample weights proportional to `1 / count(class)`, normalised to sum to 1.
pub fn weighted_sampler_weights(labels: &[usize]) -> Result<Vec<f64>> {
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no labels to weight".into()));
    }
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let mut counts = vec![0usize; n_classes];
    labels.iter().for_each(|&l| counts[l] += 1);
    let present = counts.iter().filter(|&&c| c > 0).count() as f64;
    Ok(labels.iter().map(|&l| 1.0 / (counts[l] as f64 * present)).collect())
}

/// Draws `n` indices with replacement according to `weights`.
pub fn weighted_sample<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let dist = WeightedIndex::new(weights).map_err(|e| Error::InvalidArgument(format!("sampler weights: {e}")))?;
    Ok((0..n).map(|_| dist.sample(rng)).collect())
}
