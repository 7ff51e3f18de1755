//! Quantifiers over several softmax rows for one input, shared by
//! MC-Dropout (stochastic passes) and deep ensembles (member models).

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::softmax::entropy;
use crate::models::{ClassifierModel, DropoutSampleSet};
use crate::tensor::argmax;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McScores {
    /// Variation ratio: `1 − mode count / T`.
    pub vr: f64,
    /// `1 − max p̄`.
    pub ms: f64,
    /// Mutual information: `PE − mean member entropy`.
    pub mi: f64,
    /// Predictive entropy: `H(p̄)`.
    pub pe: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnsembleScores {
    pub ms: f64,
    pub mi: f64,
    pub pe: f64,
}

/// Quantifiers over `T` rows `[T × C]`; mode ties go to the lower class.
pub fn uncertainty_scores(rows: &Tensor) -> Result<McScores> {
    let (t, c) = rows.expect_matrix("uncertainty_scores")?;
    if t < 2 {
        return Err(Error::config("at least two rows are needed"));
    }
    let mut mean = vec![0.0; c];
    let mut counts = vec![0usize; c];
    let mut member_entropy = 0.0;
    for row in rows.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
        counts[argmax(row)] += 1;
        member_entropy += entropy(row);
    }
    let tf = t as f64;
    mean.iter_mut().for_each(|m| *m /= tf);
    let mode = counts.iter().copied().max().unwrap_or(0);
    let pe = entropy(&mean);
    Ok(McScores {
        vr: 1.0 - mode as f64 / tf,
        ms: 1.0 - mean.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        mi: pe - member_entropy / tf,
        pe,
    })
}

pub fn mc_scores(set: &DropoutSampleSet) -> Result<McScores> {
    uncertainty_scores(&set.rows)
}

/// Member softmax rows stacked per input, then the shared quantifiers.
pub fn ensemble_scores(models: &[ClassifierModel], images: &Tensor) -> Result<Vec<EnsembleScores>> {
    if models.len() < 2 {
        return Err(Error::config("an ensemble needs at least two models"));
    }
    let c = models[0].classes();
    if models.iter().any(|m| m.classes() != c) {
        return Err(Error::config("ensemble members disagree on the class count"));
    }
    let preds = models.iter().map(|m| m.predict(images)).collect::<Result<Vec<_>>>()?;
    let n = preds[0].rows();
    (0..n)
        .map(|i| {
            let rows: Vec<f64> = preds.iter().flat_map(|p| p.row(i).iter().copied()).collect();
            let s = uncertainty_scores(&Tensor::new(vec![models.len(), c], rows)?)?;
            Ok(EnsembleScores {
                ms: s.ms,
                mi: s.mi,
                pe: s.pe,
            })
        })
        .collect()
}
