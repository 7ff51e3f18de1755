//! Network roles: classifier, autoencoder, discriminator.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::adam::{AdamConfig, AdamState};
use crate::nn::{apply_loss, collect_gradients, Activation, DropoutSpec, LossKind, Mlp, MlpGradients};
use crate::rng::SeededRng;
use crate::tape::GradientTape;
use crate::tensor::{argmax, softmax};
use crate::{Error, Result, Tensor, IMAGE_PIXELS};

/// Rows evaluated per forward pass during batched inference.
pub const INFERENCE_CHUNK: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ClassifierConfig {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub classes: usize,
    pub dropout: f64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input: IMAGE_PIXELS,
            hidden: vec![256, 128],
            classes: 10,
            dropout: 0.5,
        }
    }
}

/// Dense classifier with a `C`-logit head and dropout after every hidden
/// layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierModel {
    pub net: Mlp,
    /// Dropout rate applied after each hidden layer.
    pub dropout: Vec<f64>,
}

pub fn build_classifier(config: &ClassifierConfig, rng: &mut SeededRng) -> Result<ClassifierModel> {
    if config.hidden.is_empty() {
        return Err(Error::config("a classifier needs at least one hidden (dropout) layer"));
    }
    if config.classes < 2 {
        return Err(Error::config("a classifier needs at least two classes"));
    }
    if !(0.0..1.0).contains(&config.dropout) {
        return Err(Error::config(format!("dropout rate {} outside [0, 1)", config.dropout)));
    }
    let mut widths = vec![config.input];
    widths.extend_from_slice(&config.hidden);
    widths.push(config.classes);
    let net = Mlp::glorot(&widths, Activation::Relu, Activation::Identity, rng)?;
    Ok(ClassifierModel {
        dropout: vec![config.dropout; config.hidden.len()],
        net,
    })
}

/// `T` stochastic softmax rows for one input.
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutSampleSet {
    /// `[T × C]`.
    pub rows: Tensor,
    pub classes: Vec<usize>,
}

impl DropoutSampleSet {
    pub fn from_rows(rows: Tensor) -> Result<Self> {
        let (t, _) = rows.expect_matrix("DropoutSampleSet")?;
        if t < 2 {
            return Err(Error::config("a sample set needs at least two rows"));
        }
        let classes = rows.iter_rows().map(argmax).collect();
        Ok(DropoutSampleSet { rows, classes })
    }
}

impl ClassifierModel {
    pub fn classes(&self) -> usize {
        self.net.out_dim()
    }

    pub fn hidden_layers(&self) -> usize {
        self.net.depth() - 1
    }

    /// Raw logits, `[N × C]`.
    pub fn logits(&self, images: &Tensor) -> Result<Tensor> {
        chunked(images, self.net.in_dim(), |x| self.net.forward(x))
    }

    /// Softmax rows with dropout disabled.
    pub fn predict(&self, images: &Tensor) -> Result<Tensor> {
        softmax(&self.logits(images)?)
    }

    /// Post-activation outputs of every hidden layer plus the softmax head.
    pub fn trace(&self, images: &Tensor) -> Result<(Vec<Tensor>, Tensor)> {
        let x = as_matrix(images, self.net.in_dim())?;
        let mut hidden: Vec<Vec<f64>> = vec![Vec::new(); self.hidden_layers()];
        let mut logits = Vec::new();
        for start in (0..x.rows()).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(x.rows());
            let mut outs = self.net.forward_all(&x.slice_rows(start, end), None)?;
            logits.extend_from_slice(outs.pop().expect("output layer").data());
            for (h, o) in hidden.iter_mut().zip(outs) {
                h.extend_from_slice(o.data());
            }
        }
        let n = x.rows();
        let hidden = hidden
            .into_iter()
            .zip(&self.net.layers)
            .map(|(h, l)| Tensor::new(vec![n, l.out_dim()], h))
            .collect::<Result<Vec<_>>>()?;
        let probs = softmax(&Tensor::new(vec![n, self.classes()], logits)?)?;
        Ok((hidden, probs))
    }

    /// `T` stochastic forward passes for a single image.
    pub fn mc_dropout_predict(&self, image: &[f64], t: usize, seed: u64) -> Result<DropoutSampleSet> {
        let x = Tensor::new(vec![1, image.len()], image.to_vec())?;
        let mut sets = self.mc_dropout_predict_batch(&x, t, seed)?;
        Ok(sets.pop().expect("one sample set"))
    }

    /// `T` stochastic forward passes for each row of `images`; masks are
    /// drawn independently per row and per pass from one stream.
    pub fn mc_dropout_predict_batch(&self, images: &Tensor, t: usize, seed: u64) -> Result<Vec<DropoutSampleSet>> {
        if t < 2 {
            return Err(Error::config(format!("MC-Dropout needs T >= 2, got {t}")));
        }
        let x = as_matrix(images, self.net.in_dim())?;
        let n = x.rows();
        let c = self.classes();
        let mut rng = SeededRng::new(seed);
        // samples[i] collects the T rows of input i
        let mut samples: Vec<Vec<f64>> = vec![Vec::with_capacity(t * c); n];
        for start in (0..n).step_by(INFERENCE_CHUNK) {
            let end = (start + INFERENCE_CHUNK).min(n);
            let chunk = x.slice_rows(start, end);
            for _ in 0..t {
                let spec = DropoutSpec {
                    rates: &self.dropout,
                    rng: &mut rng,
                };
                let mut outs = self.net.forward_all(&chunk, Some(spec))?;
                let probs = softmax(&outs.pop().expect("output layer"))?;
                for (i, row) in probs.iter_rows().enumerate() {
                    samples[start + i].extend_from_slice(row);
                }
            }
        }
        samples
            .into_iter()
            .map(|rows| DropoutSampleSet::from_rows(Tensor::new(vec![t, c], rows)?))
            .collect()
    }
}

fn as_matrix(images: &Tensor, width: usize) -> Result<Tensor> {
    if images.shape().len() < 2 || images.row_len() != width {
        return Err(Error::dim("model input", &[images.shape()[0], width], images.shape()));
    }
    Ok(images.clone().flatten_rows())
}

fn chunked(images: &Tensor, width: usize, f: impl Fn(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
    let x = as_matrix(images, width)?;
    let mut parts = Vec::new();
    for start in (0..x.rows()).step_by(INFERENCE_CHUNK) {
        let end = (start + INFERENCE_CHUNK).min(x.rows());
        parts.push(f(&x.slice_rows(start, end))?);
    }
    if parts.is_empty() {
        return f(&x);
    }
    let refs: Vec<&Tensor> = parts.iter().collect();
    Tensor::concat_rows(&refs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Halve the learning rate (and roll back the epoch) whenever the
    /// full-set training loss increases.
    pub halve_on_increase: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 30,
            batch_size: 128,
            adam: AdamConfig::default(),
            halve_on_increase: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Full-set training loss after each epoch that was kept.
    pub epoch_losses: Vec<f64>,
    pub rejected_epochs: usize,
    pub final_lr: f64,
    pub train_accuracy: f64,
    pub validation_accuracy: Option<f64>,
}

fn check_labels(images: &Tensor, labels: &Tensor, classes: usize) -> Result<()> {
    let (n, c) = labels.expect_matrix("labels")?;
    if n != images.rows() || c != classes {
        return Err(Error::dim("labels", &[images.rows(), classes], labels.shape()));
    }
    if n == 0 {
        return Err(Error::Empty("training set"));
    }
    Ok(())
}

/// Soft cross-entropy of the model (dropout off) on a whole set.
pub fn classifier_loss(model: &ClassifierModel, images: &Tensor, labels: &Tensor) -> Result<f64> {
    let probs = model.predict(images)?;
    let mut total = 0.0;
    for (p, t) in probs.iter_rows().zip(labels.iter_rows()) {
        for (pi, ti) in p.iter().zip(t) {
            if *ti > 0.0 {
                total -= ti * libm::log(pi.max(1e-300));
            }
        }
    }
    Ok(total / probs.rows() as f64)
}

/// Fraction of rows whose predicted argmax equals the label argmax.
pub fn classifier_accuracy(model: &ClassifierModel, images: &Tensor, labels: &Tensor) -> Result<f64> {
    let probs = model.predict(images)?;
    let hits = probs
        .iter_rows()
        .zip(labels.iter_rows())
        .filter(|(p, t)| argmax(p) == argmax(t))
        .count();
    Ok(hits as f64 / probs.rows().max(1) as f64)
}

/// Mini-batch Adam on soft-target cross-entropy. Labels are probability
/// rows `[N × C]`.
pub fn train_classifier(
    config: &ClassifierConfig,
    images: &Tensor,
    labels: &Tensor,
    train: &TrainConfig,
    validation: Option<(&Tensor, &Tensor)>,
    seed: u64,
) -> Result<(ClassifierModel, TrainReport)> {
    let root = SeededRng::new(seed);
    let mut model = build_classifier(config, &mut root.split("init"))?;
    let x = as_matrix(images, config.input)?;
    check_labels(&x, labels, config.classes)?;
    if train.batch_size == 0 {
        return Err(Error::config("batch size must be positive"));
    }
    let mut order_rng = root.split("order");
    let mut dropout_rng = root.split("dropout");
    let mut adam = AdamState::for_mlp(train.adam, &model.net);
    let mut best = classifier_loss(&model, &x, labels)?;
    let mut losses = Vec::with_capacity(train.epochs);
    let mut rejected = 0;
    for epoch in 0..train.epochs {
        let snapshot = (model.clone(), adam.clone());
        let order = order_rng.permutation(x.rows());
        for batch in order.chunks(train.batch_size) {
            let bx = x.select_rows(batch);
            let by = labels.select_rows(batch);
            let spec = DropoutSpec {
                rates: &model.dropout,
                rng: &mut dropout_rng,
            };
            let (_, grads) = model
                .net
                .loss_and_gradients_with(&bx, &by, LossKind::SoftCrossEntropy, Some(spec))
                .map_err(|e| in_epoch(e, epoch))?;
            adam.update_mlp(&mut model.net, &grads)?;
        }
        let loss = classifier_loss(&model, &x, labels)?;
        if !loss.is_finite() {
            return Err(Error::NonFinite {
                location: format!("epoch {epoch}: training loss"),
            });
        }
        if train.halve_on_increase && loss > best {
            let lr = adam.config.lr;
            (model, adam) = snapshot;
            adam.config.lr = lr * 0.5;
            rejected += 1;
            continue;
        }
        best = best.min(loss);
        losses.push(loss);
    }
    let report = TrainReport {
        epoch_losses: losses,
        rejected_epochs: rejected,
        final_lr: adam.config.lr,
        train_accuracy: classifier_accuracy(&model, &x, labels)?,
        validation_accuracy: match validation {
            Some((vx, vy)) => Some(classifier_accuracy(&model, vx, vy)?),
            None => None,
        },
    };
    Ok((model, report))
}

fn in_epoch(e: Error, epoch: usize) -> Error {
    match e {
        Error::NonFinite { location } => Error::NonFinite {
            location: format!("epoch {epoch}, {location}"),
        },
        other => other,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AutoencoderConfig {
    pub input: usize,
    /// Encoder hidden widths; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent: usize,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            input: IMAGE_PIXELS,
            hidden: vec![256, 64],
            latent: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderModel {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

pub fn build_autoencoder(config: &AutoencoderConfig, rng: &mut SeededRng) -> Result<AutoencoderModel> {
    let mut enc = vec![config.input];
    enc.extend_from_slice(&config.hidden);
    enc.push(config.latent);
    let dec: Vec<usize> = enc.iter().rev().copied().collect();
    Ok(AutoencoderModel {
        encoder: Mlp::glorot(&enc, Activation::Relu, Activation::Identity, rng)?,
        decoder: Mlp::glorot(&dec, Activation::Relu, Activation::Sigmoid, rng)?,
    })
}

impl AutoencoderModel {
    pub fn latent_dim(&self) -> usize {
        self.encoder.out_dim()
    }

    pub fn encode(&self, images: &Tensor) -> Result<Tensor> {
        chunked(images, self.encoder.in_dim(), |x| self.encoder.forward(x))
    }

    pub fn decode(&self, latent: &Tensor) -> Result<Tensor> {
        chunked(latent, self.decoder.in_dim(), |z| self.decoder.forward(z))
    }

    pub fn reconstruct(&self, images: &Tensor) -> Result<Tensor> {
        self.decode(&self.encode(images)?)
    }

    /// Mean per-pixel squared reconstruction error, one value per row.
    pub fn reconstruction_errors(&self, images: &Tensor) -> Result<Vec<f64>> {
        let x = as_matrix(images, self.encoder.in_dim())?;
        let r = self.reconstruct(&x)?;
        let w = x.row_len() as f64;
        Ok(x.iter_rows()
            .zip(r.iter_rows())
            .map(|(a, b)| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>() / w)
            .collect())
    }

    /// Reconstruction mse on a batch and gradients for encoder and decoder.
    pub fn reconstruction_gradients(&self, batch: &Tensor) -> Result<(f64, MlpGradients, MlpGradients)> {
        let mut tape = GradientTape::new();
        let x = tape.leaf(batch.clone(), false)?;
        let (z, enc) = self.encoder.record(&mut tape, x, true, None)?;
        let (out, dec) = self.decoder.record(&mut tape, z, true, None)?;
        let loss = apply_loss(&mut tape, out, batch.clone(), LossKind::Mse)?;
        let value = tape.value(loss).data()[0];
        let mut grads = tape.backward(loss)?;
        Ok((value, collect_gradients(&mut grads, &enc), collect_gradients(&mut grads, &dec)))
    }
}

/// Plain reconstruction training (no adversarial regularization).
pub fn train_autoencoder(
    config: &AutoencoderConfig,
    images: &Tensor,
    train: &TrainConfig,
    seed: u64,
) -> Result<(AutoencoderModel, Vec<f64>)> {
    let root = SeededRng::new(seed);
    let mut ae = build_autoencoder(config, &mut root.split("init"))?;
    let x = as_matrix(images, config.input)?;
    if x.rows() == 0 {
        return Err(Error::Empty("autoencoder training set"));
    }
    let mut order_rng = root.split("order");
    let mut enc_adam = AdamState::for_mlp(train.adam, &ae.encoder);
    let mut dec_adam = AdamState::for_mlp(train.adam, &ae.decoder);
    let mut losses = Vec::with_capacity(train.epochs);
    for epoch in 0..train.epochs {
        let order = order_rng.permutation(x.rows());
        let mut total = 0.0;
        for batch in order.chunks(train.batch_size.max(1)) {
            let bx = x.select_rows(batch);
            let (loss, ge, gd) = ae.reconstruction_gradients(&bx).map_err(|e| in_epoch(e, epoch))?;
            enc_adam.update_mlp(&mut ae.encoder, &ge)?;
            dec_adam.update_mlp(&mut ae.decoder, &gd)?;
            total += loss * batch.len() as f64;
        }
        losses.push(total / x.rows() as f64);
    }
    Ok((ae, losses))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscriminatorConfig {
    pub latent: usize,
    pub conditions: usize,
    pub hidden: Vec<usize>,
}

impl Default for DiscriminatorConfig {
    fn default() -> Self {
        DiscriminatorConfig {
            latent: 2,
            conditions: 2,
            hidden: vec![64, 64],
        }
    }
}

/// Network over `[z, one-hot condition]` emitting one "real" logit.
pub fn build_discriminator(config: &DiscriminatorConfig, rng: &mut SeededRng) -> Result<Mlp> {
    let mut widths = vec![config.latent + config.conditions];
    widths.extend_from_slice(&config.hidden);
    widths.push(1);
    Mlp::glorot(&widths, Activation::Relu, Activation::Identity, rng)
}
