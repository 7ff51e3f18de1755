//! Reverse-mode gradient tape over whole-tensor operations.
//!
//! The op set is exactly what the networks in this crate need: affine maps,
//! pointwise activations, column concatenation (discriminator conditioning),
//! constant masks (dropout) and three scalar losses. Values are recorded in
//! forward order; [`GradientTape::backward`] walks them in reverse and
//! accumulates a gradient for every node that depends on a leaf created with
//! `requires_grad = true`.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::linalg::{matmul_nn, matmul_nt, matmul_tn_acc};
use crate::nn::Activation;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    Linear { input: NodeId, weight: NodeId, bias: NodeId },
    Activation { input: NodeId, kind: Activation },
    ConcatCols { left: NodeId, right: NodeId },
    Mask { input: NodeId, mask: Vec<f64> },
    Mse { pred: NodeId, target: Tensor },
    SoftCrossEntropy { logits: NodeId, target: Tensor, probs: Tensor },
    BceWithLogits { logits: NodeId, target: Tensor },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Linear { .. } => "linear",
            Op::Activation { .. } => "activation",
            Op::ConcatCols { .. } => "concat",
            Op::Mask { .. } => "mask",
            Op::Mse { .. } => "mse loss",
            Op::SoftCrossEntropy { .. } => "soft cross-entropy loss",
            Op::BceWithLogits { .. } => "binary cross-entropy loss",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct GradientTape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`NodeId`]; `None` for nodes that do not depend on
/// any gradient-requiring leaf.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, id: NodeId) -> Option<Tensor> {
        self.grads.get_mut(id.0).and_then(Option::take)
    }
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                location: format!("{} (tape node {})", op.name(), self.nodes.len()),
            });
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// `input · weightᵀ + bias` for `input [B×in]`, `weight [out×in]`,
    /// `bias [out]`.
    pub fn linear(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        let (batch, fan_in) = x.expect_matrix("linear")?;
        let (fan_out, w_in) = w.expect_matrix("linear")?;
        if w_in != fan_in {
            return Err(Error::dim("linear", &[batch, w_in], x.shape()));
        }
        b.expect_shape("linear bias", &[fan_out])?;
        let mut out = vec![0.0; batch * fan_out];
        matmul_nt(x.data(), w.data(), &mut out, batch, fan_in, fan_out);
        for row in out.chunks_exact_mut(fan_out) {
            for (o, bb) in row.iter_mut().zip(b.data()) {
                *o += bb;
            }
        }
        let rg = self.rg(input) || self.rg(weight) || self.rg(bias);
        let value = Tensor::new(vec![batch, fan_out], out)?;
        self.push(value, Op::Linear { input, weight, bias }, rg)
    }

    pub fn activation(&mut self, input: NodeId, kind: Activation) -> Result<NodeId> {
        let value = self.value(input).map(|v| kind.apply(v));
        let rg = self.rg(input);
        self.push(value, Op::Activation { input, kind }, rg)
    }

    /// Concatenates two matrices with the same row count along columns.
    pub fn concat_cols(&mut self, left: NodeId, right: NodeId) -> Result<NodeId> {
        let (rows, cl) = self.value(left).expect_matrix("concat")?;
        let (rows_r, cr) = self.value(right).expect_matrix("concat")?;
        if rows != rows_r {
            return Err(Error::dim("concat", &[rows, cr], &[rows_r, cr]));
        }
        let mut out = Vec::with_capacity(rows * (cl + cr));
        for i in 0..rows {
            out.extend_from_slice(self.value(left).row(i));
            out.extend_from_slice(self.value(right).row(i));
        }
        let rg = self.rg(left) || self.rg(right);
        self.push(Tensor::new(vec![rows, cl + cr], out)?, Op::ConcatCols { left, right }, rg)
    }

    /// Elementwise product with a constant mask of the same length.
    pub fn mask(&mut self, input: NodeId, mask: Vec<f64>) -> Result<NodeId> {
        let x = self.value(input);
        if mask.len() != x.len() {
            return Err(Error::dim("mask", &[x.len()], &[mask.len()]));
        }
        let data = x.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        let rg = self.rg(input);
        self.push(value, Op::Mask { input, mask }, rg)
    }

    /// Mean squared error over all elements.
    pub fn mse(&mut self, pred: NodeId, target: Tensor) -> Result<NodeId> {
        let p = self.value(pred);
        target.expect_shape("mse target", p.shape())?;
        let n = p.len() as f64;
        let loss = p
            .data()
            .iter()
            .zip(target.data())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n;
        let rg = self.rg(pred);
        self.push(Tensor::scalar(loss), Op::Mse { pred, target }, rg)
    }

    /// Batch-mean cross-entropy between `softmax(logits)` and probability
    /// rows `target`.
    pub fn soft_cross_entropy(&mut self, logits: NodeId, target: Tensor) -> Result<NodeId> {
        let z = self.value(logits);
        let (batch, c) = z.expect_matrix("soft cross-entropy")?;
        target.expect_shape("soft cross-entropy target", z.shape())?;
        let mut probs = z.clone();
        let mut loss = 0.0;
        for (i, row) in probs.data_mut().chunks_exact_mut(c).enumerate() {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + libm::log(row.iter().map(|v| libm::exp(v - m)).sum::<f64>());
            let t = target.row(i);
            for (j, v) in row.iter_mut().enumerate() {
                let log_p = *v - lse;
                if t[j] != 0.0 {
                    loss -= t[j] * log_p;
                }
                *v = libm::exp(log_p);
            }
        }
        loss /= batch as f64;
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::SoftCrossEntropy { logits, target, probs }, rg)
    }

    /// Element-mean binary cross-entropy of `sigmoid(logits)` against
    /// targets in `[0, 1]`.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: Tensor) -> Result<NodeId> {
        let z = self.value(logits);
        target.expect_shape("bce target", z.shape())?;
        let n = z.len() as f64;
        let loss = z
            .data()
            .iter()
            .zip(target.data())
            .map(|(&x, &t)| x.max(0.0) - x * t + libm::log1p(libm::exp(-x.abs())))
            .sum::<f64>()
            / n;
        let rg = self.rg(logits);
        self.push(Tensor::scalar(loss), Op::BceWithLogits { logits, target }, rg)
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, output: NodeId) -> Result<Gradients> {
        let out = self.value(output);
        if out.len() != 1 {
            return Err(Error::dim("backward", &[1], out.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::Linear { input, weight, bias } => {
                    let x = self.value(*input);
                    let w = self.value(*weight);
                    let (batch, fan_in) = (x.shape()[0], x.shape()[1]);
                    let fan_out = w.shape()[0];
                    if self.rg(*input) {
                        let mut dx = vec![0.0; batch * fan_in];
                        matmul_nn(g.data(), w.data(), &mut dx, batch, fan_out, fan_in);
                        accumulate(&mut grads, *input, x.shape(), &dx);
                    }
                    if self.rg(*weight) {
                        let mut dw = vec![0.0; fan_out * fan_in];
                        matmul_tn_acc(g.data(), x.data(), &mut dw, batch, fan_out, fan_in);
                        accumulate(&mut grads, *weight, w.shape(), &dw);
                    }
                    if self.rg(*bias) {
                        let mut db = vec![0.0; fan_out];
                        for row in g.data().chunks_exact(fan_out) {
                            for (d, v) in db.iter_mut().zip(row) {
                                *d += v;
                            }
                        }
                        accumulate(&mut grads, *bias, &[fan_out], &db);
                    }
                }
                Op::Activation { input, kind } => {
                    let y = &node.value;
                    let dx: Vec<f64> = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(&d, &yv)| d * kind.derivative_from_output(yv))
                        .collect();
                    accumulate(&mut grads, *input, y.shape(), &dx);
                }
                Op::ConcatCols { left, right } => {
                    let cl = self.value(*left).shape()[1];
                    let cr = self.value(*right).shape()[1];
                    let rows = node.value.shape()[0];
                    let mut dl = Vec::with_capacity(rows * cl);
                    let mut dr = Vec::with_capacity(rows * cr);
                    for row in g.data().chunks_exact(cl + cr) {
                        dl.extend_from_slice(&row[..cl]);
                        dr.extend_from_slice(&row[cl..]);
                    }
                    if self.rg(*left) {
                        accumulate(&mut grads, *left, &[rows, cl], &dl);
                    }
                    if self.rg(*right) {
                        accumulate(&mut grads, *right, &[rows, cr], &dr);
                    }
                }
                Op::Mask { input, mask } => {
                    let dx: Vec<f64> = g.data().iter().zip(mask).map(|(d, m)| d * m).collect();
                    accumulate(&mut grads, *input, node.value.shape(), &dx);
                }
                Op::Mse { pred, target } => {
                    let p = self.value(*pred);
                    let scale = 2.0 * g.data()[0] / p.len() as f64;
                    let dp: Vec<f64> = p
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(a, b)| scale * (a - b))
                        .collect();
                    accumulate(&mut grads, *pred, p.shape(), &dp);
                }
                Op::SoftCrossEntropy { logits, target, probs } => {
                    let (batch, c) = (probs.shape()[0], probs.shape()[1]);
                    let scale = g.data()[0] / batch as f64;
                    let mut dz = Vec::with_capacity(batch * c);
                    for (p, t) in probs.iter_rows().zip(target.iter_rows()) {
                        let mass: f64 = t.iter().sum();
                        dz.extend(p.iter().zip(t).map(|(pv, tv)| scale * (pv * mass - tv)));
                    }
                    accumulate(&mut grads, *logits, probs.shape(), &dz);
                }
                Op::BceWithLogits { logits, target } => {
                    let z = self.value(*logits);
                    let scale = g.data()[0] / z.len() as f64;
                    let dz: Vec<f64> = z
                        .data()
                        .iter()
                        .zip(target.data())
                        .map(|(&x, &t)| scale * (sigmoid(x) - t))
                        .collect();
                    accumulate(&mut grads, *logits, z.shape(), &dz);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: NodeId, shape: &[usize], delta: &[f64]) {
    match &mut grads[id.0] {
        Some(t) => {
            for (a, d) in t.data_mut().iter_mut().zip(delta) {
                *a += d;
            }
        }
        slot @ None => {
            *slot = Some(Tensor::new(shape.to_vec(), delta.to_vec()).expect("gradient shape"));
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}
