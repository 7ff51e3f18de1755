//! Adam with bias correction.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::nn::{Mlp, MlpGradients};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

impl AdamState {
    /// Zeroed accumulators matching `shapes`.
    pub fn new(config: AdamConfig, shapes: &[&[usize]]) -> Self {
        AdamState {
            config,
            step: 0,
            first: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second: shapes.iter().map(|s| Tensor::zeros(s)).collect(),
        }
    }

    /// Accumulators for every weight and bias of `net`, in
    /// `[w0, b0, w1, b1, ...]` order.
    pub fn for_mlp(config: AdamConfig, net: &Mlp) -> Self {
        let shapes: Vec<&[usize]> = net
            .layers
            .iter()
            .flat_map(|l| [l.weights.shape(), l.bias.shape()])
            .collect();
        AdamState::new(config, &shapes)
    }

    pub fn first_moments(&self) -> &[Tensor] {
        &self.first
    }

    pub fn second_moments(&self) -> &[Tensor] {
        &self.second
    }

    /// One Adam step over parallel lists of parameters and gradients.
    pub fn update(&mut self, params: &mut [&mut Tensor], grads: &[&Tensor]) -> Result<()> {
        if params.len() != self.first.len() || grads.len() != self.first.len() {
            return Err(Error::dim("adam_update", &[self.first.len()], &[params.len(), grads.len()]));
        }
        for i in 0..params.len() {
            let shape = self.first[i].shape();
            if params[i].shape() != shape || grads[i].shape() != shape {
                return Err(Error::dim("adam_update", shape, grads[i].shape()));
            }
        }
        self.step += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let t = self.step as f64;
        let c1 = 1.0 - libm::pow(beta1, t);
        let c2 = 1.0 - libm::pow(beta2, t);
        for (i, p) in params.iter_mut().enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            let g = grads[i].data();
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let m_hat = m[j] / c1;
                let v_hat = v[j] / c2;
                *w -= lr * m_hat / (libm::sqrt(v_hat) + eps);
            }
        }
        Ok(())
    }

    /// Applies one step to every parameter of `net`.
    pub fn update_mlp(&mut self, net: &mut Mlp, grads: &MlpGradients) -> Result<()> {
        let mut params: Vec<&mut Tensor> = Vec::with_capacity(2 * net.layers.len());
        for l in net.layers.iter_mut() {
            params.push(&mut l.weights);
            params.push(&mut l.bias);
        }
        let g: Vec<&Tensor> = grads.weights.iter().zip(&grads.biases).flat_map(|(w, b)| [w, b]).collect();
        self.update(&mut params, &g)
    }
}
