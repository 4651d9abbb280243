use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub samples: usize,
    pub accuracy: f64,
    /// Macro-averaged; a class with no predictions and no support scores 0.
    pub f1: f64,
    /// ROC-AUC on the positive column for two classes, macro one-vs-rest
    /// otherwise. 0.5 when no class has both positives and negatives.
    pub auc: f64,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Metrics from per-sample class probabilities (one row per sample).
/// Predictions are the argmax with ties going to the lowest class.
pub fn compute_metrics(probs: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<MetricsReport> {
    if probs.is_empty() || probs.len() != labels.len() {
        return Err(Error::ShapeMismatch { op: "metrics", left: (probs.len(), classes), right: (labels.len(), 1) });
    }
    if let Some(row) = probs.iter().find(|r| r.len() != classes) {
        return Err(Error::ShapeMismatch { op: "metrics", left: (1, row.len()), right: (1, classes) });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::IndexOutOfRange { what: "label", index: y, len: classes });
    }
    let predictions: Vec<usize> = probs.iter().map(|row| argmax(row)).collect();
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&y, &p) in labels.iter().zip(&predictions) {
        confusion[y][p] += 1;
    }
    let correct: usize = (0..classes).map(|c| confusion[c][c]).sum();
    let mut precision = Vec::with_capacity(classes);
    let mut recall = Vec::with_capacity(classes);
    let mut f1_sum = 0.0;
    for c in 0..classes {
        let tp = confusion[c][c];
        let predicted: usize = (0..classes).map(|r| confusion[r][c]).sum();
        let actual: usize = confusion[c].iter().sum();
        let (p, r) = (ratio(tp, predicted), ratio(tp, actual));
        f1_sum += if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        precision.push(p);
        recall.push(r);
    }
    let auc = if classes == 2 {
        let scores: Vec<f64> = probs.iter().map(|r| r[1]).collect();
        let positive: Vec<bool> = labels.iter().map(|&y| y == 1).collect();
        roc_auc(&scores, &positive).unwrap_or(0.5)
    } else {
        let per_class: Vec<f64> = (0..classes)
            .filter_map(|c| {
                let scores: Vec<f64> = probs.iter().map(|r| r[c]).collect();
                let positive: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                roc_auc(&scores, &positive)
            })
            .collect();
        if per_class.is_empty() {
            0.5
        } else {
            per_class.iter().sum::<f64>() / per_class.len() as f64
        }
    };
    Ok(MetricsReport {
        samples: labels.len(),
        accuracy: ratio(correct, labels.len()),
        f1: f1_sum / classes as f64,
        auc,
        confusion,
        precision,
        recall,
    })
}

pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Mann–Whitney estimate with midranks for ties. `None` when either side is
/// empty.
pub fn roc_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|p| **p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied block i..=j shares the mean rank.
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += mid * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Some(u / (n_pos * n_neg) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn onehot(p1: f64) -> Vec<f64> {
        vec![1.0 - p1, p1]
    }

    #[test]
    fn confusion_identities() {
        let probs: Vec<_> = [0.9, 0.2, 0.6, 0.4, 0.7].iter().map(|&p| onehot(p)).collect();
        let labels = [1, 0, 0, 1, 1];
        let m = compute_metrics(&probs, &labels, 2).unwrap();
        assert_eq!(m.confusion, vec![vec![1, 1], vec![1, 2]]);
        assert_eq!(m.accuracy, 3.0 / 5.0);
        let total: usize = m.confusion.iter().flatten().sum();
        assert_eq!(total, 5);
    }

    #[test]
    fn ties_go_to_the_lowest_class() {
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.2, 0.4, 0.4]), 1);
    }

    #[test]
    fn auc_with_ties_uses_midranks() {
        // One tied pair across classes counts one half.
        let auc = roc_auc(&[0.1, 0.5, 0.5, 0.9], &[false, false, true, true]).unwrap();
        assert_eq!(auc, (1.0 + 1.0 + 1.0 + 0.5) / 4.0);
        assert_eq!(roc_auc(&[0.3, 0.3], &[true, true]), None);
    }

    #[test]
    fn ternary_auc_is_one_vs_rest_mean() {
        let probs = vec![vec![0.8, 0.1, 0.1], vec![0.1, 0.8, 0.1], vec![0.1, 0.1, 0.8], vec![0.2, 0.7, 0.1]];
        let m = compute_metrics(&probs, &[0, 1, 2, 1], 3).unwrap();
        assert_eq!((m.accuracy, m.f1, m.auc), (1.0, 1.0, 1.0));
    }

    #[test]
    fn rejects_bad_shapes() {
        assert!(compute_metrics(&[], &[], 2).is_err());
        assert!(compute_metrics(&[vec![1.0]], &[0], 2).is_err());
        assert!(compute_metrics(&[onehot(0.5)], &[2], 2).is_err());
    }
}
