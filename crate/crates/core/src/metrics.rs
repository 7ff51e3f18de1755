//! Accuracy, entropy and ROC metrics.

use alloc::vec::Vec;

use crate::supervisors::entropy;
use crate::tensor::argmax;
use crate::{Error, Result, Tensor};

/// Indices of the `k` largest entries, ties to the lower index.
pub fn top_k(row: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    // stable sort keeps lower indices first among equal values
    idx.sort_by(|&a, &b| row[b].partial_cmp(&row[a]).unwrap_or(core::cmp::Ordering::Equal));
    idx.truncate(k);
    idx
}

/// Fraction of rows whose label is among the `k` most probable predictions.
pub fn top_k_accuracy(predictions: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Empty("top_k_accuracy"));
    }
    if k == 0 {
        return Err(Error::config("k must be at least 1"));
    }
    if predictions.rows() != labels.len() {
        return Err(Error::dim("top_k_accuracy", &[labels.len()], &[predictions.rows()]));
    }
    let hits = predictions
        .iter_rows()
        .zip(labels)
        .filter(|(p, l)| top_k(p, k).contains(l))
        .count();
    Ok(hits as f64 / labels.len() as f64)
}

/// Hard ground truth for probability rows: argmax, ties to the lower index.
pub fn hard_labels(labels: &Tensor) -> Vec<usize> {
    labels.iter_rows().map(argmax).collect()
}

/// The two classes whose label probability is strictly above every other
/// class, as a sorted pair.
pub fn label_top_pair(row: &[f64], index: usize) -> Result<(usize, usize)> {
    let t = top_k(row, 3);
    if t.len() < 2 {
        return Err(Error::NotCalculable {
            row: index,
            candidates: t.len(),
        });
    }
    let min_pair = row[t[0]].min(row[t[1]]);
    if t.get(2).is_some_and(|&i| row[i] >= min_pair) {
        let candidates = row.iter().filter(|v| **v >= min_pair).count();
        return Err(Error::NotCalculable { row: index, candidates });
    }
    Ok((t[0].min(t[1]), t[0].max(t[1])))
}

/// Share of rows whose predicted top-2 set equals the label's top pair.
pub fn top_pair_accuracy(labels: &Tensor, predictions: &Tensor) -> Result<f64> {
    if labels.rows() == 0 {
        return Err(Error::Empty("top_pair_accuracy"));
    }
    if labels.shape() != predictions.shape() {
        return Err(Error::dim("top_pair_accuracy", labels.shape(), predictions.shape()));
    }
    let mut hits = 0;
    for (i, (l, p)) in labels.iter_rows().zip(predictions.iter_rows()).enumerate() {
        let want = label_top_pair(l, i)?;
        let t = top_k(p, 2);
        if (t[0].min(t[1]), t[0].max(t[1])) == want {
            hits += 1;
        }
    }
    Ok(hits as f64 / labels.rows() as f64)
}

/// Mean natural-log entropy of the rows.
pub fn mean_entropy(predictions: &Tensor) -> Result<f64> {
    if predictions.rows() == 0 {
        return Err(Error::Empty("mean_entropy"));
    }
    Ok(predictions.iter_rows().map(entropy).sum::<f64>() / predictions.rows() as f64)
}

/// Mann–Whitney AUC: `P(pos > neg) + ½ P(pos = neg)`, by rank sum with
/// average ranks over ties.
pub fn auc_roc(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Empty("auc_roc"));
    }
    if positives.iter().chain(negatives).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            location: "auc_roc input".into(),
        });
    }
    let mut all: Vec<(f64, bool)> = positives
        .iter()
        .map(|&v| (v, true))
        .chain(negatives.iter().map(|&v| (v, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    // rank sums doubled so that average ranks stay integral
    let mut pos_rank2: u128 = 0;
    let mut i = 0;
    while i < all.len() {
        let mut j = i;
        while j < all.len() && all[j].0 == all[i].0 {
            j += 1;
        }
        // ranks i+1..=j, average (i+1+j)/2
        let avg2 = (i + 1 + j) as u128;
        let pos_in_group = all[i..j].iter().filter(|x| x.1).count() as u128;
        pos_rank2 += avg2 * pos_in_group;
        i = j;
    }
    let (p, n) = (positives.len() as u128, negatives.len() as u128);
    let u2 = pos_rank2 - p * (p + 1);
    Ok(u2 as f64 / (2 * p * n) as f64)
}
