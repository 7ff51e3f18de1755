//! Dense layers, multi-layer perceptrons and their losses.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::linalg::matmul_nt;
use crate::rng::SeededRng;
use crate::tape::{GradientTape, NodeId};
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Tanh => libm::tanh(x),
            Activation::Sigmoid => crate::tape::sigmoid(x),
        }
    }

    /// Derivative expressed through the activation's output value.
    pub fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }

    /// Stable byte code used by the checkpoint format.
    pub fn code(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Relu => 1,
            Activation::Tanh => 2,
            Activation::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => Activation::Identity,
            1 => Activation::Relu,
            2 => Activation::Tanh,
            3 => Activation::Sigmoid,
            _ => return None,
        })
    }
}

/// Affine map `activation(x · Wᵀ + b)` with `W [out × in]`, `b [out]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Tensor,
    pub bias: Tensor,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Tensor, bias: Tensor, activation: Activation) -> Result<Self> {
        let (out, _) = weights.expect_matrix("DenseLayer::new")?;
        bias.expect_shape("DenseLayer::new bias", &[out])?;
        Ok(DenseLayer { weights, bias, activation })
    }

    /// Glorot-uniform weights, zero bias.
    pub fn glorot(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut SeededRng) -> Self {
        let limit = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
        let w = (0..fan_in * fan_out).map(|_| rng.uniform_in(-limit, limit)).collect();
        DenseLayer {
            weights: Tensor::new(vec![fan_out, fan_in], w).expect("glorot shape"),
            bias: Tensor::zeros(&[fan_out]),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    /// Pre-activation `x · Wᵀ + b` for a `[batch × in]` input.
    fn affine(&self, input: &Tensor) -> Result<Tensor> {
        let (batch, fan_in) = input.expect_matrix("dense_forward")?;
        if fan_in != self.in_dim() {
            return Err(Error::dim("dense_forward", &[batch, self.in_dim()], input.shape()));
        }
        let out_dim = self.out_dim();
        let mut out = vec![0.0; batch * out_dim];
        matmul_nt(input.data(), self.weights.data(), &mut out, batch, fan_in, out_dim);
        for row in out.chunks_exact_mut(out_dim) {
            for (o, b) in row.iter_mut().zip(self.bias.data()) {
                *o += b;
            }
        }
        Tensor::new(vec![batch, out_dim], out)
    }
}

/// `activation(input · Wᵀ + bias)`, row-wise.
pub fn dense_forward(layer: &DenseLayer, input: &Tensor) -> Result<Tensor> {
    let mut out = layer.affine(input)?;
    let act = layer.activation;
    out.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    /// Mean squared error on the network output.
    Mse,
    /// Cross-entropy of `softmax(output)` against probability rows.
    SoftCrossEntropy,
    /// Binary cross-entropy of `sigmoid(output)` against targets in [0, 1].
    BinaryCrossEntropy,
}

/// Tape handles for one recorded layer.
#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub weight: NodeId,
    pub bias: NodeId,
    /// Post-activation output (before any dropout mask).
    pub output: NodeId,
}

/// Per-layer parameter gradients, same order as [`Mlp::layers`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGradients {
    pub weights: Vec<Tensor>,
    pub biases: Vec<Tensor>,
}

/// Inverted dropout applied after every hidden layer.
pub struct DropoutSpec<'a> {
    pub rates: &'a [f64],
    pub rng: &'a mut SeededRng,
}

impl DropoutSpec<'_> {
    fn mask(&mut self, layer: usize, len: usize) -> Option<Vec<f64>> {
        let p = self.rates.get(layer).copied().unwrap_or(0.0);
        if p <= 0.0 {
            return None;
        }
        let keep = 1.0 / (1.0 - p);
        Some((0..len).map(|_| if self.rng.uniform() < p { 0.0 } else { keep }).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::config("an MLP needs at least one layer"));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::config(format!(
                    "layer {i} emits {} features but layer {} expects {}",
                    pair[0].out_dim(),
                    i + 1,
                    pair[1].in_dim()
                )));
            }
        }
        Ok(Mlp { layers })
    }

    /// Glorot-initialized stack with `widths = [in, h1, ..., out]`; hidden
    /// layers use `hidden`, the last layer uses `output`.
    pub fn glorot(widths: &[usize], hidden: Activation, output: Activation, rng: &mut SeededRng) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::config(format!("invalid layer widths {widths:?}")));
        }
        let n = widths.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                DenseLayer::glorot(widths[i], widths[i + 1], act, rng)
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Deterministic forward pass.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut h = dense_forward(&self.layers[0], input)?;
        for layer in &self.layers[1..] {
            h = dense_forward(layer, &h)?;
        }
        Ok(h)
    }

    /// Forward pass returning every layer's post-activation output; with a
    /// dropout spec, masks are applied after hidden layers (the returned
    /// tensors are the masked ones).
    pub fn forward_all(&self, input: &Tensor, mut dropout: Option<DropoutSpec<'_>>) -> Result<Vec<Tensor>> {
        let mut outs: Vec<Tensor> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outs[i - 1] };
            let mut h = dense_forward(layer, x).map_err(|e| at_layer(e, i))?;
            if !h.is_finite() {
                return Err(Error::NonFinite { location: format!("layer {i}") });
            }
            if i + 1 < self.layers.len() {
                if let Some(mask) = dropout.as_mut().and_then(|d| d.mask(i, h.len())) {
                    h.data_mut().iter_mut().zip(&mask).for_each(|(v, m)| *v *= m);
                }
            }
            outs.push(h);
        }
        Ok(outs)
    }

    /// Records the network on `tape`, feeding from `input`. Parameters are
    /// leaves with `requires_grad = trainable`.
    pub fn record(
        &self,
        tape: &mut GradientTape,
        input: NodeId,
        trainable: bool,
        mut dropout: Option<DropoutSpec<'_>>,
    ) -> Result<(NodeId, Vec<LayerNodes>)> {
        let mut h = input;
        let mut nodes = Vec::with_capacity(self.layers.len());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let step = |tape: &mut GradientTape| -> Result<LayerNodes> {
                let weight = tape.leaf(layer.weights.clone(), trainable)?;
                let bias = tape.leaf(layer.bias.clone(), trainable)?;
                let pre = tape.linear(h, weight, bias)?;
                let output = tape.activation(pre, layer.activation)?;
                Ok(LayerNodes { weight, bias, output })
            };
            let ln = step(tape).map_err(|e| at_layer(e, i))?;
            h = ln.output;
            if i < last {
                let len = tape.value(h).len();
                if let Some(mask) = dropout.as_mut().and_then(|d| d.mask(i, len)) {
                    h = tape.mask(h, mask)?;
                }
            }
            nodes.push(ln);
        }
        Ok((h, nodes))
    }

    /// Loss of the network on a batch and exact gradients for every
    /// parameter. For the cross-entropy kinds the network output is treated
    /// as logits.
    pub fn loss_and_gradients(&self, inputs: &Tensor, targets: &Tensor, kind: LossKind) -> Result<(f64, MlpGradients)> {
        self.loss_and_gradients_with(inputs, targets, kind, None)
    }

    pub fn loss_and_gradients_with(
        &self,
        inputs: &Tensor,
        targets: &Tensor,
        kind: LossKind,
        dropout: Option<DropoutSpec<'_>>,
    ) -> Result<(f64, MlpGradients)> {
        let mut tape = GradientTape::new();
        let x = tape.leaf(inputs.clone(), false)?;
        let (out, nodes) = self.record(&mut tape, x, true, dropout)?;
        let loss = apply_loss(&mut tape, out, targets.clone(), kind)
            .map_err(|e| at_layer(e, self.layers.len() - 1))?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        Ok((value, collect_gradients(&mut grads, &nodes)))
    }

    /// Gradient of the loss with respect to the input batch (parameters
    /// frozen), together with the loss value.
    pub fn input_gradient(&self, inputs: &Tensor, targets: &Tensor, kind: LossKind) -> Result<(f64, Tensor)> {
        let mut tape = GradientTape::new();
        let x = tape.leaf(inputs.clone(), true)?;
        let (out, _) = self.record(&mut tape, x, false, None)?;
        let loss = apply_loss(&mut tape, out, targets.clone(), kind)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        Ok((value, grads.take(x).expect("input gradient")))
    }

    /// Forward-mode Jacobian at a single point: returns `J [out × in]`
    /// with `J[o][i] = ∂ output_o / ∂ input_i`, computed from one tangent
    /// per input dimension.
    pub fn jacobian(&self, point: &[f64]) -> Result<Tensor> {
        let d = point.len();
        if d != self.in_dim() {
            return Err(Error::dim("jacobian", &[self.in_dim()], &[d]));
        }
        let mut h = Tensor::new(vec![1, d], point.to_vec())?;
        // tangents[k] = ∂h/∂input_k, stored as a [d × width] matrix
        let mut tangents = Tensor::zeros(&[d, d]);
        for k in 0..d {
            tangents.data_mut()[k * d + k] = 1.0;
        }
        for layer in &self.layers {
            let y = dense_forward(layer, &h)?;
            let out = layer.out_dim();
            let mut t = vec![0.0; d * out];
            matmul_nt(tangents.data(), layer.weights.data(), &mut t, d, layer.in_dim(), out);
            for row in t.chunks_exact_mut(out) {
                for (tv, &yv) in row.iter_mut().zip(y.data()) {
                    *tv *= layer.activation.derivative_from_output(yv);
                }
            }
            tangents = Tensor::new(vec![d, out], t)?;
            h = y;
        }
        // transpose [d × out] into [out × d]
        let out = self.out_dim();
        let mut j = vec![0.0; out * d];
        for k in 0..d {
            for o in 0..out {
                j[o * d + k] = tangents.data()[k * out + o];
            }
        }
        Tensor::new(vec![out, d], j)
    }

    /// Frobenius norm of [`jacobian`](Self::jacobian).
    pub fn jacobian_frobenius_norm(&self, point: &[f64]) -> Result<f64> {
        let j = self.jacobian(point)?;
        Ok(libm::sqrt(j.data().iter().map(|v| v * v).sum()))
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.is_finite() && l.bias.is_finite())
    }
}

pub(crate) fn apply_loss(tape: &mut GradientTape, out: NodeId, targets: Tensor, kind: LossKind) -> Result<NodeId> {
    match kind {
        LossKind::Mse => tape.mse(out, targets),
        LossKind::SoftCrossEntropy => tape.soft_cross_entropy(out, targets),
        LossKind::BinaryCrossEntropy => tape.bce_with_logits(out, targets),
    }
}

pub(crate) fn collect_gradients(grads: &mut crate::tape::Gradients, nodes: &[LayerNodes]) -> MlpGradients {
    let mut weights = Vec::with_capacity(nodes.len());
    let mut biases = Vec::with_capacity(nodes.len());
    for n in nodes {
        weights.push(grads.take(n.weight).expect("weight gradient"));
        biases.push(grads.take(n.bias).expect("bias gradient"));
    }
    MlpGradients { weights, biases }
}

fn at_layer(e: Error, layer: usize) -> Error {
    match e {
        Error::NonFinite { location } => Error::NonFinite {
            location: format!("layer {layer}: {location}"),
        },
        other => other,
    }
}
