#![allow(dead_code)]

use std::path::{Path, PathBuf};

use ambiguess::config::BenchConfig;

/// MNIST and Fashion-MNIST IDX directories, from `AMBIGUESS_DATA` or the
/// workspace `data/` folder.
pub fn data_dir() -> PathBuf {
    std::env::var_os("AMBIGUESS_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|| Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data"))
}

pub fn desk_config_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/desk.json")
}

/// The desk config with absolute data paths and `output` set to `out`.
pub fn desk_config(out: &Path) -> BenchConfig {
    let text = std::fs::read_to_string(desk_config_path()).unwrap();
    let mut c = BenchConfig::from_json(&text, "desk.json").unwrap();
    c.data.nominal_dir = data_dir().join("mnist");
    c.data.foreign_dir = data_dir().join("fashion");
    c.output = out.to_path_buf();
    c
}

/// Seconds-scale variant: one pair, two rAAEs, small sets, short training.
pub fn tiny_config(out: &Path) -> BenchConfig {
    let mut c = desk_config(out);
    c.generation.pairs = vec![[3, 8]];
    c.generation.raae_seeds = vec![0, 1];
    c.generation.raae.epochs = 2;
    c.generation.raae.adversarial_epochs = 2;
    c.generation.train_samples = 300;
    c.generation.test_samples = 100;
    c.classifier.architectures.truncate(1);
    c.classifier.repetitions = 1;
    c.classifier.nominal_train_limit = Some(3000);
    c.classifier.train.epochs = 2;
    c.supervisors.ensemble_size = 2;
    c.supervisors.mc_samples = 4;
    c.supervisors.surprise_fit_rows = 1000;
    c.supervisors.autoencoder.train.epochs = 2;
    c.test_sets.nominal = 200;
    c.test_sets.adversarial = 100;
    c.test_sets.corrupted = 100;
    c.test_sets.invalid = 100;
    c
}
