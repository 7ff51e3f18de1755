//! Two-class regularized adversarial autoencoders.
//!
//! The encoder is pushed to map each class onto its own Gaussian mode of a
//! bimodal prior, which leaves a sparsely populated corridor between the
//! modes. A class-conditioned discriminator then labels any latent point.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::models::{build_autoencoder, build_discriminator, AutoencoderConfig, AutoencoderModel, DiscriminatorConfig};
use crate::nn::{collect_gradients, DropoutSpec, LossKind, Mlp};
use crate::rng::SeededRng;
use crate::tape::{sigmoid, GradientTape};
use crate::{Error, Result, Tensor};

/// Raw discriminator outputs below this are treated as "no support".
pub const UNLABELABLE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ClassPair {
    pub c1: usize,
    pub c2: usize,
    pub dataset: String,
}

impl ClassPair {
    pub fn new(a: usize, b: usize, dataset: impl Into<String>) -> Result<Self> {
        if a == b {
            return Err(Error::config(format!("class pair needs two distinct classes, got ({a}, {b})")));
        }
        Ok(ClassPair {
            c1: a.min(b),
            c2: a.max(b),
            dataset: dataset.into(),
        })
    }

    /// 0 for `c1`, 1 for `c2`, `None` otherwise.
    pub fn side(&self, class: usize) -> Option<usize> {
        if class == self.c1 {
            Some(0)
        } else if class == self.c2 {
            Some(1)
        } else {
            None
        }
    }

    pub fn class(&self, side: usize) -> usize {
        if side == 0 {
            self.c1
        } else {
            self.c2
        }
    }
}

/// Diagonal Gaussian per class; index 0 belongs to `c1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPrior {
    pub means: [Vec<f64>; 2],
    pub stds: [Vec<f64>; 2],
}

impl Default for LatentPrior {
    fn default() -> Self {
        LatentPrior {
            means: [vec![-3.0, 0.0], vec![3.0, 0.0]],
            stds: [vec![1.0, 1.0], vec![1.0, 1.0]],
        }
    }
}

impl LatentPrior {
    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 || self.means.iter().chain(&self.stds).any(|v| v.len() != d) {
            return Err(Error::config("prior means and stds must share one positive dimension"));
        }
        if self.stds.iter().flatten().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::config("prior standard deviations must be finite and non-negative"));
        }
        Ok(())
    }

    /// Log density of mode `side` at `z`.
    pub fn log_density(&self, side: usize, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((x, m), sd) in z.iter().zip(&self.means[side]).zip(&self.stds[side]) {
            let u = (x - m) / sd;
            s += -0.5 * u * u - libm::log(sd * libm::sqrt(2.0 * core::f64::consts::PI));
        }
        s
    }

    /// Whether `{z : p(z|c1) > eps}` and `{z : p(z|c2) > eps}` are disjoint.
    ///
    /// Each set is an open axis-aligned ellipsoid. By convex duality the two
    /// intersect iff `max_λ min_z λ·q1(z) + (1−λ)·q2(z) < 1` for the
    /// normalized quadratic forms `q_i`; the inner minimum is closed form per
    /// axis and the outer maximum is over a concave function of `λ`.
    pub fn modes_disjoint(&self, eps: f64) -> Result<bool> {
        self.validate()?;
        if !(eps > 0.0) {
            return Err(Error::config("eps must be positive"));
        }
        let mut r2 = [0.0; 2];
        for side in 0..2 {
            if self.stds[side].iter().any(|s| *s == 0.0) {
                return Err(Error::config("disjointness is undefined for degenerate modes"));
            }
            let log_peak = self.log_density(side, &self.means[side]);
            r2[side] = 2.0 * (log_peak - libm::log(eps));
            if r2[side] <= 0.0 {
                return Ok(true);
            }
        }
        let g = |lambda: f64| -> f64 {
            let mut s = 0.0;
            for k in 0..self.dim() {
                let a = lambda / (self.stds[0][k] * self.stds[0][k] * r2[0]);
                let b = (1.0 - lambda) / (self.stds[1][k] * self.stds[1][k] * r2[1]);
                let delta = self.means[0][k] - self.means[1][k];
                if a + b > 0.0 {
                    s += a * b / (a + b) * delta * delta;
                }
            }
            s
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        for _ in 0..200 {
            let m1 = lo + (hi - lo) / 3.0;
            let m2 = hi - (hi - lo) / 3.0;
            if g(m1) < g(m2) {
                lo = m1;
            } else {
                hi = m2;
            }
        }
        Ok(g(0.5 * (lo + hi)) >= 1.0)
    }
}

/// i.i.d. draws from one mode of the prior, `[n × d]`.
pub fn sample_prior(prior: &LatentPrior, side: usize, n: usize, rng: &mut SeededRng) -> Tensor {
    let d = prior.dim();
    let mut data = Vec::with_capacity(n * d);
    for _ in 0..n {
        for k in 0..d {
            data.push(prior.means[side][k] + prior.stds[side][k] * rng.normal());
        }
    }
    Tensor::new(vec![n, d], data).expect("prior sample shape")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilisticLabel {
    pub c1: usize,
    pub c2: usize,
    pub p1: f64,
    pub p2: f64,
}

impl ProbabilisticLabel {
    /// Normalizes two non-negative supports into a label.
    pub fn from_supports(pair: &ClassPair, s1: f64, s2: f64) -> Result<Self> {
        if s1 < UNLABELABLE_FLOOR && s2 < UNLABELABLE_FLOOR {
            return Err(Error::Unlabelable { z: Vec::new() });
        }
        let total = s1 + s2;
        Ok(ProbabilisticLabel {
            c1: pair.c1,
            c2: pair.c2,
            p1: s1 / total,
            p2: s2 / total,
        })
    }

    pub fn gap(&self) -> f64 {
        (self.p1 - self.p2).abs()
    }

    pub fn is_truly_ambiguous(&self) -> bool {
        self.p1 > 0.0 && self.p2 > 0.0
    }

    /// The label as a `classes`-long probability row.
    pub fn embed(&self, classes: usize) -> Vec<f64> {
        let mut row = vec![0.0; classes];
        row[self.c1] = self.p1;
        row[self.c2] = self.p2;
        row
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub real_fake_accuracy: f64,
    pub class_accuracy: f64,
    pub accepted: bool,
}

impl Verdict {
    pub fn new(real_fake_accuracy: f64, class_accuracy: f64) -> Self {
        Verdict {
            real_fake_accuracy,
            class_accuracy,
            accepted: (0.4..=0.6).contains(&real_fake_accuracy) && class_accuracy > 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaaeModel {
    pub pair: ClassPair,
    pub autoencoder: AutoencoderModel,
    pub discriminator: Mlp,
    pub prior: LatentPrior,
    pub verdict: Option<Verdict>,
}

impl RaaeModel {
    pub fn is_accepted(&self) -> bool {
        self.verdict.is_some_and(|v| v.accepted)
    }

    /// Sigmoid discriminator outputs `[n × 2]` (conditioned on `c1`, `c2`)
    /// for latent rows `[n × d]`.
    pub fn supports(&self, latent: &Tensor) -> Result<Tensor> {
        let (n, d) = latent.expect_matrix("supports")?;
        let mut out = Vec::with_capacity(2 * n);
        let mut inputs = [Vec::with_capacity(n * (d + 2)), Vec::with_capacity(n * (d + 2))];
        for z in latent.iter_rows() {
            for (side, buf) in inputs.iter_mut().enumerate() {
                buf.extend_from_slice(z);
                buf.extend_from_slice(if side == 0 { &[1.0, 0.0] } else { &[0.0, 1.0] });
            }
        }
        let [a, b] = inputs;
        let sa = self.discriminator.forward(&Tensor::new(vec![n, d + 2], a)?)?;
        let sb = self.discriminator.forward(&Tensor::new(vec![n, d + 2], b)?)?;
        for (x, y) in sa.data().iter().zip(sb.data()) {
            out.push(sigmoid(*x));
            out.push(sigmoid(*y));
        }
        Tensor::new(vec![n, 2], out)
    }

    /// Labels every latent row; unlabelable rows yield errors in place.
    pub fn labels(&self, latent: &Tensor) -> Result<Vec<Result<ProbabilisticLabel>>> {
        let s = self.supports(latent)?;
        Ok(s.iter_rows()
            .zip(latent.iter_rows())
            .map(|(s, z)| {
                ProbabilisticLabel::from_supports(&self.pair, s[0], s[1]).map_err(|_| Error::Unlabelable { z: z.to_vec() })
            })
            .collect())
    }
}

/// Normalized discriminator label at one latent point.
pub fn probabilistic_label(model: &RaaeModel, z: &[f64]) -> Result<ProbabilisticLabel> {
    let t = Tensor::new(vec![1, z.len()], z.to_vec())?;
    model.labels(&t)?.pop().expect("one label")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RaaeConfig {
    pub autoencoder: AutoencoderConfig,
    pub discriminator_hidden: Vec<usize>,
    pub prior: LatentPrior,
    pub epochs: usize,
    /// Epochs (from the start) in which the two adversarial steps run;
    /// 0 turns the model into a plain autoencoder.
    pub adversarial_epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Also show the discriminator prior draws of the other class under the
    /// wrong condition, labelled fake.
    pub mismatched_negatives: bool,
}

impl Default for RaaeConfig {
    fn default() -> Self {
        RaaeConfig {
            autoencoder: AutoencoderConfig::default(),
            discriminator_hidden: vec![64, 64],
            prior: LatentPrior::default(),
            epochs: 20,
            adversarial_epochs: 20,
            batch_size: 128,
            adam: AdamConfig::default(),
            mismatched_negatives: true,
        }
    }
}

/// Training data for one pair: images `[n × 784]` and sides (0 = `c1`).
#[derive(Debug, Clone, PartialEq)]
pub struct PairData {
    pub images: Tensor,
    pub sides: Vec<usize>,
}

impl PairData {
    /// Rows of `images` whose label is `c1` or `c2`.
    pub fn extract(pair: &ClassPair, images: &Tensor, labels: &[usize]) -> Self {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| pair.side(labels[i]).is_some()).collect();
        PairData {
            images: images.select_rows(&idx).flatten_rows(),
            sides: idx.iter().map(|&i| pair.side(labels[i]).expect("filtered")).collect(),
        }
    }

    /// Subsamples the larger class so both sides have equal counts.
    pub fn balanced(&self, rng: &mut SeededRng) -> Self {
        let by_side: [Vec<usize>; 2] =
            [0, 1].map(|s| (0..self.sides.len()).filter(|&i| self.sides[i] == s).collect());
        let k = by_side[0].len().min(by_side[1].len());
        let mut keep: Vec<usize> = by_side
            .iter()
            .flat_map(|ix| rng.subsample(ix.len(), k).into_iter().map(move |j| ix[j]))
            .collect();
        keep.sort_unstable();
        PairData {
            images: self.images.select_rows(&keep),
            sides: keep.iter().map(|&i| self.sides[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.sides.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sides.is_empty()
    }
}

/// Per-epoch training losses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RaaeHistory {
    pub reconstruction: Vec<f64>,
    pub discriminator: Vec<f64>,
    pub generator: Vec<f64>,
}

fn condition(sides: &[usize]) -> Vec<f64> {
    sides.iter().flat_map(|&s| if s == 0 { [1.0, 0.0] } else { [0.0, 1.0] }).collect()
}

fn with_condition(z: &Tensor, cond: &[f64]) -> Result<Tensor> {
    let (n, d) = z.expect_matrix("with_condition")?;
    let mut data = Vec::with_capacity(n * (d + 2));
    for (row, c) in z.iter_rows().zip(cond.chunks_exact(2)) {
        data.extend_from_slice(row);
        data.extend_from_slice(c);
    }
    Tensor::new(vec![n, d + 2], data)
}

/// Trains an rAAE. Every mini-batch runs, in order: reconstruction (E, D),
/// discriminator (prior draws real, encodings fake), and the encoder step
/// that makes encodings look real to the discriminator.
pub fn train_raae(
    pair: &ClassPair,
    data: &PairData,
    config: &RaaeConfig,
    seed: u64,
) -> Result<(RaaeModel, RaaeHistory)> {
    config.prior.validate()?;
    if config.prior.dim() != config.autoencoder.latent {
        return Err(Error::config("prior dimension must equal the latent dimension"));
    }
    if data.images.row_len() != config.autoencoder.input || data.images.rows() != data.sides.len() {
        return Err(Error::dim("train_raae", &[data.sides.len(), config.autoencoder.input], data.images.shape()));
    }
    if data.sides.iter().any(|&s| s > 1) {
        return Err(Error::config("pair data sides must be 0 or 1"));
    }
    let root = SeededRng::new(seed);
    let data = data.balanced(&mut root.split("balance"));
    if data.is_empty() {
        return Err(Error::Empty("pair data"));
    }
    let mut init = root.split("init");
    let mut ae = build_autoencoder(&config.autoencoder, &mut init)?;
    let mut disc = build_discriminator(
        &DiscriminatorConfig {
            latent: config.autoencoder.latent,
            conditions: 2,
            hidden: config.discriminator_hidden.clone(),
        },
        &mut init,
    )?;
    let mut order_rng = root.split("order");
    let mut prior_rng = root.split("prior");
    let mut enc_adam = AdamState::for_mlp(config.adam, &ae.encoder);
    let mut dec_adam = AdamState::for_mlp(config.adam, &ae.decoder);
    let mut gen_adam = AdamState::for_mlp(config.adam, &ae.encoder);
    let mut disc_adam = AdamState::for_mlp(config.adam, &disc);
    let mut history = RaaeHistory {
        reconstruction: Vec::new(),
        discriminator: Vec::new(),
        generator: Vec::new(),
    };
    let n = data.len();
    for epoch in 0..config.epochs {
        let adversarial = epoch < config.adversarial_epochs;
        let order = order_rng.permutation(n);
        let (mut rec_sum, mut disc_sum, mut gen_sum) = (0.0, 0.0, 0.0);
        for batch in order.chunks(config.batch_size.max(1)) {
            let diag = |e: Error| match e {
                Error::NonFinite { location } => Error::NonFinite {
                    location: format!("rAAE epoch {epoch}: {location}"),
                },
                other => other,
            };
            let bx = data.images.select_rows(batch);
            let sides: Vec<usize> = batch.iter().map(|&i| data.sides[i]).collect();
            let b = batch.len() as f64;

            let (rec, ge, gd) = ae.reconstruction_gradients(&bx).map_err(diag)?;
            enc_adam.update_mlp(&mut ae.encoder, &ge)?;
            dec_adam.update_mlp(&mut ae.decoder, &gd)?;
            rec_sum += rec * b;
            if !adversarial {
                continue;
            }

            let cond = condition(&sides);
            let (loss, gdisc) = discriminator_gradients(&disc, &ae.encoder, &bx, &sides, &cond, config, &mut prior_rng)
                .map_err(diag)?;
            disc_adam.update_mlp(&mut disc, &gdisc)?;
            disc_sum += loss * b;

            let (loss, genc) = generator_gradients(&disc, &ae.encoder, &bx, &cond).map_err(diag)?;
            gen_adam.update_mlp(&mut ae.encoder, &genc)?;
            gen_sum += loss * b;
        }
        history.reconstruction.push(rec_sum / n as f64);
        history.discriminator.push(disc_sum / n as f64);
        history.generator.push(gen_sum / n as f64);
    }
    let model = RaaeModel {
        pair: pair.clone(),
        autoencoder: ae,
        discriminator: disc,
        prior: config.prior.clone(),
        verdict: None,
    };
    Ok((model, history))
}

/// Discriminator BCE over prior draws (target 1) and encodings (target 0),
/// both under the true condition, plus optional mismatched prior draws.
fn discriminator_gradients(
    disc: &Mlp,
    encoder: &Mlp,
    images: &Tensor,
    sides: &[usize],
    cond: &[f64],
    config: &RaaeConfig,
    prior_rng: &mut SeededRng,
) -> Result<(f64, crate::nn::MlpGradients)> {
    let n = sides.len();
    let d = config.autoencoder.latent;
    let encoded = encoder.forward(images)?;
    let mut real = Vec::with_capacity(n * d);
    let mut wrong = Vec::with_capacity(n * d);
    for &s in sides {
        for k in 0..d {
            real.push(config.prior.means[s][k] + config.prior.stds[s][k] * prior_rng.normal());
        }
        if config.mismatched_negatives {
            for k in 0..d {
                wrong.push(config.prior.means[1 - s][k] + config.prior.stds[1 - s][k] * prior_rng.normal());
            }
        }
    }
    let real = with_condition(&Tensor::new(vec![n, d], real)?, cond)?;
    let fake = with_condition(&encoded, cond)?;
    let mut parts = vec![&real, &fake];
    let mut targets = vec![1.0; n];
    targets.extend(core::iter::repeat_n(0.0, n));
    let wrong_t;
    if config.mismatched_negatives {
        wrong_t = with_condition(&Tensor::new(vec![n, d], wrong)?, cond)?;
        parts.push(&wrong_t);
        targets.extend(core::iter::repeat_n(0.0, n));
    }
    let inputs = Tensor::concat_rows(&parts)?;
    let rows = inputs.rows();
    disc.loss_and_gradients(&inputs, &Tensor::new(vec![rows, 1], targets)?, LossKind::BinaryCrossEntropy)
}

/// Encoder gradients for making encodings score as real.
fn generator_gradients(disc: &Mlp, encoder: &Mlp, images: &Tensor, cond: &[f64]) -> Result<(f64, crate::nn::MlpGradients)> {
    let n = images.rows();
    let mut tape = GradientTape::new();
    let x = tape.leaf(images.clone(), false)?;
    let (z, enc_nodes) = encoder.record(&mut tape, x, true, None)?;
    let c = tape.leaf(Tensor::new(vec![n, 2], cond.to_vec())?, false)?;
    let zc = tape.concat_cols(z, c)?;
    let (logit, _) = disc.record(&mut tape, zc, false, None::<DropoutSpec<'_>>)?;
    let loss = tape.bce_with_logits(logit, Tensor::filled(&[n, 1], 1.0))?;
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    Ok((value, collect_gradients(&mut grads, &enc_nodes)))
}

/// Loss functions used in training, exposed for gradient verification.
pub mod losses {
    use super::*;

    pub fn discriminator_loss(disc: &Mlp, real: &Tensor, fake: &Tensor) -> Result<(f64, crate::nn::MlpGradients)> {
        let n = real.rows();
        let m = fake.rows();
        let inputs = Tensor::concat_rows(&[real, fake])?;
        let mut t = vec![1.0; n];
        t.extend(core::iter::repeat_n(0.0, m));
        disc.loss_and_gradients(&inputs, &Tensor::new(vec![n + m, 1], t)?, LossKind::BinaryCrossEntropy)
    }

    pub fn generator_loss(disc: &Mlp, encoder: &Mlp, images: &Tensor, sides: &[usize]) -> Result<(f64, crate::nn::MlpGradients)> {
        generator_gradients(disc, encoder, images, &condition(sides))
    }
}

/// Gate from held-out pair data. Real-vs-prior accuracy thresholds the
/// true-class-conditioned discriminator output at 0.5 over the encoded
/// held-out points (fake) and as many prior draws (real); class accuracy
/// counts points whose label puts strictly more mass on the true class.
pub fn validate_raae(model: &RaaeModel, held_out: &PairData, seed: u64) -> Result<Verdict> {
    if held_out.is_empty() {
        return Err(Error::Empty("validation data"));
    }
    let mut rng = SeededRng::new(seed).split("validate");
    let z = model.autoencoder.encode(&held_out.images)?;
    let d = z.row_len();
    let mut prior = Vec::with_capacity(z.len());
    for &s in &held_out.sides {
        for k in 0..d {
            prior.push(model.prior.means[s][k] + model.prior.stds[s][k] * rng.normal());
        }
    }
    let prior = Tensor::new(vec![held_out.len(), d], prior)?;
    let fake = model.supports(&z)?;
    let real = model.supports(&prior)?;
    let mut correct = 0usize;
    let mut class_hits = 0usize;
    for (i, &s) in held_out.sides.iter().enumerate() {
        if fake.row(i)[s] < 0.5 {
            correct += 1;
        }
        if real.row(i)[s] >= 0.5 {
            correct += 1;
        }
        let f = fake.row(i);
        if let Ok(label) = ProbabilisticLabel::from_supports(&model.pair, f[0], f[1]) {
            let (own, other) = if s == 0 { (label.p1, label.p2) } else { (label.p2, label.p1) };
            if own > other {
                class_hits += 1;
            }
        }
    }
    let n = held_out.len() as f64;
    Ok(Verdict::new(correct as f64 / (2.0 * n), class_hits as f64 / n))
}
