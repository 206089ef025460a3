use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Probabilities are clamped to `[P_MIN, 1 - P_MIN]` before taking logs.
pub const P_MIN: f64 = 1e-12;

/// Binary cross-entropy of a predicted click probability.
pub fn bce_loss(p: f64, label: bool) -> f64 {
    let p = p.clamp(P_MIN, 1.0 - P_MIN);
    if label {
        -libm::log(p)
    } else {
        -libm::log(1.0 - p)
    }
}

/// `dL/dp` of [`bce_loss`] (inside the clamp).
pub fn bce_grad(p: f64, label: bool) -> f64 {
    let p = p.clamp(P_MIN, 1.0 - P_MIN);
    if label {
        -1.0 / p
    } else {
        1.0 / (1.0 - p)
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + libm::exp(-z))
    } else {
        let e = libm::exp(z);
        e / (1.0 + e)
    }
}

/// Area under the ROC curve: the probability that a random positive scores
/// above a random negative, ties counting one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::invalid("scores and labels differ in length"));
    }
    let positives = labels.iter().filter(|&&l| l).count();
    let negatives = labels.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::UndefinedMetric("AUC needs at least one positive and one negative label".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_unstable_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Sum of (1-based, tie-averaged) ranks of the positives.
    let mut rank_sum = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        let average_rank = (start + end + 1) as f64 / 2.0;
        let tied_positives = order[start..end].iter().filter(|&&i| labels[i]).count();
        rank_sum += average_rank * tied_positives as f64;
        start = end;
    }
    let p = positives as f64;
    Ok((rank_sum - p * (p + 1.0) / 2.0) / (p * negatives as f64))
}
