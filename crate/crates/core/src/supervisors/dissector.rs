//! Per-layer linear-softmax submodels and the support-value score.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::models::ClassifierModel;
use crate::nn::{Activation, LossKind, Mlp};
use crate::rng::SeededRng;
use crate::tensor::{argmax, softmax};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DissectorConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
}

impl Default for DissectorConfig {
    fn default() -> Self {
        DissectorConfig {
            epochs: 5,
            batch_size: 128,
            adam: AdamConfig::default(),
        }
    }
}

/// One linear-softmax submodel per hidden layer, in layer order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dissector {
    pub submodels: Vec<Mlp>,
}

/// `s_l / (s_l + max_{j≠l} s_j)`: 1 when the submodel is certain of `l`,
/// 0.5 when `l` ties its best competitor, towards 0 when it is outvoted.
pub fn support_value(probs: &[f64], class: usize) -> f64 {
    let own = probs[class];
    let rival = probs
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != class)
        .map(|(_, v)| *v)
        .fold(0.0, f64::max);
    if own + rival > 0.0 {
        own / (own + rival)
    } else {
        0.5
    }
}

/// `1 −` the support values averaged with weights `k / depth`, `k = 1..=depth`.
pub fn dissector_score(per_layer_probs: &[&[f64]], predicted: usize) -> f64 {
    let depth = per_layer_probs.len() as f64;
    let (mut num, mut den) = (0.0, 0.0);
    for (k, p) in per_layer_probs.iter().enumerate() {
        let w = (k + 1) as f64 / depth;
        num += w * support_value(p, predicted);
        den += w;
    }
    1.0 - num / den
}

/// Trains one submodel per hidden layer of `model` on its activations for
/// `images`, against probability rows `labels`.
pub fn fit_dissector(
    model: &ClassifierModel,
    images: &Tensor,
    labels: &Tensor,
    config: &DissectorConfig,
    seed: u64,
) -> Result<Dissector> {
    let (hidden, _) = model.trace(images)?;
    let classes = model.classes();
    if labels.rows() != images.rows() || labels.row_len() != classes {
        return Err(Error::dim("fit_dissector", &[images.rows(), classes], labels.shape()));
    }
    let root = SeededRng::new(seed);
    let mut submodels = Vec::with_capacity(hidden.len());
    for (k, feats) in hidden.iter().enumerate() {
        let mut rng = root.split_index(k as u64);
        let mut sub = Mlp::glorot(&[feats.row_len(), classes], Activation::Identity, Activation::Identity, &mut rng)?;
        let mut adam = AdamState::for_mlp(config.adam, &sub);
        for _ in 0..config.epochs {
            let order = rng.permutation(feats.rows());
            for batch in order.chunks(config.batch_size.max(1)) {
                let (_, g) = sub
                    .loss_and_gradients(&feats.select_rows(batch), &labels.select_rows(batch), LossKind::SoftCrossEntropy)
                    .map_err(|e| Error::Fit(format!("dissector layer {k}: {e}")))?;
                adam.update_mlp(&mut sub, &g)?;
            }
        }
        submodels.push(sub);
    }
    Ok(Dissector { submodels })
}

impl Dissector {
    /// Per-layer submodel probabilities for hidden activations.
    pub fn layer_probs(&self, hidden: &[Tensor]) -> Result<Vec<Tensor>> {
        if hidden.len() != self.submodels.len() {
            return Err(Error::dim("dissector", &[self.submodels.len()], &[hidden.len()]));
        }
        self.submodels.iter().zip(hidden).map(|(s, h)| softmax(&s.forward(h)?)).collect()
    }

    /// Scores for a batch, given the model's hidden activations and softmax.
    pub fn scores(&self, hidden: &[Tensor], probs: &Tensor) -> Result<Vec<f64>> {
        let layers = self.layer_probs(hidden)?;
        Ok(probs
            .iter_rows()
            .enumerate()
            .map(|(i, p)| {
                let rows: Vec<&[f64]> = layers.iter().map(|l| l.row(i)).collect();
                dissector_score(&rows, argmax(p))
            })
            .collect())
    }

    /// Top-1 accuracy of each submodel against hard labels.
    pub fn layer_accuracies(&self, hidden: &[Tensor], labels: &[usize]) -> Result<Vec<f64>> {
        let layers = self.layer_probs(hidden)?;
        Ok(layers
            .iter()
            .map(|l| {
                let hits = l.iter_rows().zip(labels).filter(|(r, y)| argmax(r) == **y).count();
                hits as f64 / labels.len().max(1) as f64
            })
            .collect())
    }
}
