//! Supervised models shared by the ambiguity evaluation and the supervisor
//! bench, cached as checkpoints keyed by the config digest.

use std::path::PathBuf;

use ambiguess_core::datasets::{assemble_mixed_training, LabelSet, ProbabilisticDataset};
use ambiguess_core::models::{train_autoencoder, train_classifier, AutoencoderModel, ClassifierConfig, ClassifierModel};
use ambiguess_core::rng::derive_seed;
use ambiguess_core::{SeededRng, Tensor};
use anyhow::{Context, Result};

use crate::checkpoint;
use crate::config::{Architecture, BenchConfig};
use crate::data::{self, Dataset, CLASSES};
use crate::generate::generated_dir;
use crate::log::Logger;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainingSet {
    /// Nominal rows only, one-hot labels.
    Clean,
    /// Nominal rows plus the ambiguous training split.
    Mixed,
}

impl TrainingSet {
    pub fn as_str(self) -> &'static str {
        match self {
            TrainingSet::Clean => "clean",
            TrainingSet::Mixed => "mixed-ambiguous",
        }
    }
}

/// Everything the supervised stages read from disk.
pub struct Inputs {
    pub digest: String,
    pub nominal: Dataset,
    pub foreign: Dataset,
    pub ambiguous_test: ProbabilisticDataset,
    /// Flattened training rows and labels per training set.
    pub clean: (Tensor, Tensor),
    pub mixed: (Tensor, Tensor),
}

impl Inputs {
    pub fn load(config: &BenchConfig, log: &Logger) -> Result<Self> {
        let digest = config.digest();
        let nominal = data::load_dataset(&config.data.nominal_dir)?;
        let foreign = data::load_dataset(&config.data.foreign_dir)?;
        let dir = generated_dir(config);
        let (ambiguous_train, train_meta) = data::load_split_dataset(&dir, "train")
            .with_context(|| format!("generated datasets missing under {}; run `generate` first", dir.display()))?;
        let (ambiguous_test, test_meta) = data::load_split_dataset(&dir, "test")?;
        for meta in [&train_meta, &test_meta] {
            anyhow::ensure!(
                meta.config_digest == digest,
                "{}: generated with config {} but the current config is {digest}",
                dir.display(),
                meta.config_digest
            );
        }
        let limit = config.classifier.nominal_train_limit.unwrap_or(usize::MAX);
        let base = nominal.train.range(0, limit);
        log.info(format_args!(
            "training sets: {} nominal rows, {} ambiguous rows",
            base.len(),
            ambiguous_train.len()
        ));
        let clean = (base.images.clone(), LabelSet::one_hot(&base.labels, CLASSES)?.probs);
        let mut rng = SeededRng::new(derive_seed(config.seed, "mixed-training-set"));
        let mixed = assemble_mixed_training(&base.images, &base.labels, CLASSES, &ambiguous_train, &mut rng)?;
        let mixed = (mixed.images.matrix(), mixed.labels.probs);
        Ok(Inputs {
            digest,
            nominal,
            foreign,
            ambiguous_test,
            clean,
            mixed,
        })
    }

    pub fn training(&self, set: TrainingSet) -> (&Tensor, &Tensor) {
        let (x, y) = match set {
            TrainingSet::Clean => &self.clean,
            TrainingSet::Mixed => &self.mixed,
        };
        (x, y)
    }
}

fn models_dir(config: &BenchConfig) -> PathBuf {
    config.output.join("models")
}

pub fn classifier_path(config: &BenchConfig, arch: &Architecture, set: TrainingSet, index: usize) -> PathBuf {
    models_dir(config).join(format!("{}-{}-{index}.ambg", arch.name, set.as_str()))
}

/// Loads a cached classifier whose digest matches, or trains and caches one.
pub fn classifier(
    config: &BenchConfig,
    inputs: &Inputs,
    arch: &Architecture,
    set: TrainingSet,
    index: usize,
    log: &Logger,
) -> Result<ClassifierModel> {
    let path = classifier_path(config, arch, set, index);
    if let Ok((model, meta)) = checkpoint::load_classifier(&path) {
        if meta.config_digest() == inputs.digest {
            return Ok(model);
        }
    }
    let (x, y) = inputs.training(set);
    let cfg = ClassifierConfig {
        hidden: arch.hidden.clone(),
        classes: CLASSES,
        dropout: config.classifier.dropout,
        ..ClassifierConfig::default()
    };
    let seed = derive_seed(config.seed, &format!("classifier/{}/{}/{index}", arch.name, set.as_str()));
    let (model, report) = train_classifier(&cfg, x, y, &config.classifier.train, None, seed)
        .with_context(|| format!("training {}", path.display()))?;
    log.info(format_args!(
        "{} {} #{index}: train accuracy {:.4}, final loss {:.4}",
        arch.name,
        set.as_str(),
        report.train_accuracy,
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    ));
    checkpoint::save_classifier(&path, &model, &inputs.digest)?;
    Ok(model)
}

/// Reconstruction supervisor for repetition `rep`, trained on the nominal
/// training images only.
pub fn autoencoder(config: &BenchConfig, inputs: &Inputs, rep: usize, log: &Logger) -> Result<AutoencoderModel> {
    let path = models_dir(config).join(format!("autoencoder-nominal-{rep}.ambg"));
    if let Ok((model, meta)) = checkpoint::load_autoencoder(&path) {
        if meta.config_digest() == inputs.digest {
            return Ok(model);
        }
    }
    let ae = &config.supervisors.autoencoder;
    let seed = derive_seed(config.seed, &format!("autoencoder/{rep}"));
    let (model, losses) = train_autoencoder(&ae.architecture, &inputs.clean.0, &ae.train, seed)
        .with_context(|| format!("training {}", path.display()))?;
    log.info(format_args!(
        "autoencoder #{rep}: final reconstruction loss {:.5}",
        losses.last().copied().unwrap_or(f64::NAN)
    ));
    checkpoint::save_autoencoder(&path, &model, &inputs.digest)?;
    Ok(model)
}
