//! Binary classification metrics: accuracy, ROC AUC, precision, recall, F1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Absent when only one class is present.
    pub auc: Option<f64>,
    pub acc: f64,
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub threshold: f64,
    pub n_pos: usize,
    pub n_neg: usize,
}

/// `2 p r / (p + r)`, or 0 when both are 0.
pub fn f1_score(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Mann-Whitney AUC from mid-ranks; ties count one half.
///
/// Ranks are kept doubled so the statistic stays an exact integer.
pub fn roc_auc(p: &[f64], y: &[u8]) -> Option<f64> {
    let n_pos = y.iter().filter(|&&v| v == 1).count();
    let n_neg = y.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..p.len()).collect();
    order.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && p[order[j + 1]] == p[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 share the mid-rank (i + j + 2) / 2.
        let twice_mid = (i + j + 2) as u128;
        for &k in &order[i..=j] {
            if y[k] == 1 {
                twice_rank_sum += twice_mid;
            }
        }
        i = j + 1;
    }
    let twice_u = twice_rank_sum - (n_pos as u128) * (n_pos as u128 + 1);
    Some(twice_u as f64 / (2.0 * n_pos as f64 * n_neg as f64))
}

/// Thresholded metrics (prediction is 1 iff `p >= threshold`) plus AUC.
pub fn evaluate(p: &[f64], y: &[u8], threshold: f64) -> Result<MetricReport> {
    if p.len() != y.len() {
        return Err(Error::Argument(format!(
            "{} probabilities for {} labels",
            p.len(),
            y.len()
        )));
    }
    if p.is_empty() {
        return Err(Error::Argument("cannot evaluate an empty set".into()));
    }
    if let Some(bad) = y.iter().find(|&&v| v > 1) {
        return Err(Error::Argument(format!("label {bad} is not 0 or 1")));
    }
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("predicted probabilities".into()));
    }
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for (&prob, &label) in p.iter().zip(y) {
        match (prob >= threshold, label == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(MetricReport {
        auc: roc_auc(p, y),
        acc: ratio(tp + tn, p.len()),
        f1: f1_score(precision, recall),
        precision,
        recall,
        threshold,
        n_pos: tp + fn_,
        n_neg: tn + fp,
    })
}
