//! Independent reference implementations used as test oracles.

#![allow(dead_code)]

use ambiguess_core::nn::{Activation, LossKind, Mlp};

pub fn act(kind: Activation, x: f64) -> f64 {
    match kind {
        Activation::Identity => x,
        Activation::Relu => {
            if x > 0.0 {
                x
            } else {
                0.0
            }
        }
        Activation::Tanh => x.tanh(),
        Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
    }
}

/// Triple-loop forward pass over row-major `x` with `n` rows.
pub fn naive_forward(net: &Mlp, x: &[f64], n: usize) -> Vec<f64> {
    let mut cur = x.to_vec();
    for layer in &net.layers {
        let (out, inp) = (layer.out_dim(), layer.in_dim());
        let w = layer.weights.data();
        let b = layer.bias.data();
        let mut next = vec![0.0; n * out];
        for r in 0..n {
            for o in 0..out {
                let mut s = b[o];
                for i in 0..inp {
                    s += cur[r * inp + i] * w[o * inp + i];
                }
                next[r * out + o] = act(layer.activation, s);
            }
        }
        cur = next;
    }
    cur
}

pub fn naive_loss(out: &[f64], target: &[f64], n: usize, kind: LossKind) -> f64 {
    let c = out.len() / n;
    match kind {
        LossKind::Mse => out.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / out.len() as f64,
        LossKind::SoftCrossEntropy => {
            let mut total = 0.0;
            for r in 0..n {
                let row = &out[r * c..(r + 1) * c];
                let z: f64 = row.iter().map(|v| v.exp()).sum();
                for j in 0..c {
                    total -= target[r * c + j] * (row[j].exp() / z).ln();
                }
            }
            total / n as f64
        }
        LossKind::BinaryCrossEntropy => {
            let mut total = 0.0;
            for (x, t) in out.iter().zip(target) {
                let p = 1.0 / (1.0 + (-x).exp());
                total -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            }
            total / out.len() as f64
        }
    }
}

pub fn naive_net_loss(net: &Mlp, x: &[f64], target: &[f64], n: usize, kind: LossKind) -> f64 {
    naive_loss(&naive_forward(net, x, n), target, n, kind)
}

/// Relative error with a floor so that vanishing gradients compare by
/// absolute difference.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Central difference of `f` around `x[i]`.
pub fn central_diff(x: &mut [f64], i: usize, h: f64, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + h;
    let up = f(x);
    x[i] = orig - h;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * h)
}
