//! Versioned JSON configuration for the generation and benchmark pipeline.
//!
//! Unknown keys are rejected at every level. Relative paths resolve against
//! the working directory. The digest covers every field except `output`,
//! so moving a run does not change its identity.

use std::fs;
use std::path::{Path, PathBuf};

use ambiguess_core::datasets::{AttackConfig, CorruptionKind, SeverityTable};
use ambiguess_core::models::{AutoencoderConfig, TrainConfig};
use ambiguess_core::raae::{ClassPair, RaaeConfig};
use ambiguess_core::supervisors::{DissectorConfig, Supervisor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// IDX files in the usual `{train,t10k}-{images-idx3,labels-idx1}-ubyte`
/// layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    /// Name recorded in class pairs and provenance.
    pub name: String,
    pub nominal_dir: PathBuf,
    /// Foreign-domain images for the invalid family.
    pub foreign_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationConfig {
    pub pairs: Vec<[usize; 2]>,
    /// One rAAE is trained per seed and pair.
    pub raae_seeds: Vec<u64>,
    #[serde(default)]
    pub raae: RaaeConfig,
    #[serde(default = "default_grid")]
    pub grid: usize,
    #[serde(default = "default_delta_train")]
    pub delta_train: f64,
    #[serde(default = "default_delta_test")]
    pub delta_test: f64,
    pub train_samples: usize,
    pub test_samples: usize,
}

fn default_grid() -> usize {
    ambiguess_core::sampler::DEFAULT_GRID
}

fn default_delta_train() -> f64 {
    0.4
}

fn default_delta_test() -> f64 {
    0.25
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub name: String,
    pub hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSettings {
    pub architectures: Vec<Architecture>,
    pub repetitions: usize,
    #[serde(default = "default_dropout")]
    pub dropout: f64,
    #[serde(default)]
    pub train: TrainConfig,
    /// Leading rows of the nominal training split to use; all when absent.
    #[serde(default)]
    pub nominal_train_limit: Option<usize>,
}

fn default_dropout() -> f64 {
    0.5
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AutoencoderSupervisorConfig {
    pub architecture: AutoencoderConfig,
    pub train: TrainConfig,
}

impl Default for AutoencoderSupervisorConfig {
    fn default() -> Self {
        AutoencoderSupervisorConfig {
            architecture: AutoencoderConfig {
                hidden: vec![256, 64],
                latent: 16,
                ..AutoencoderConfig::default()
            },
            train: TrainConfig {
                epochs: 10,
                halve_on_increase: false,
                ..TrainConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SupervisorSettings {
    /// Supervisor ids; all sixteen when absent.
    #[serde(default = "all_supervisor_ids")]
    pub enabled: Vec<String>,
    #[serde(default = "default_ensemble_size")]
    pub ensemble_size: usize,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub dissector: DissectorConfig,
    #[serde(default)]
    pub autoencoder: AutoencoderSupervisorConfig,
    /// Training rows whose activations fit the surprise adequacies.
    #[serde(default = "default_surprise_fit_rows")]
    pub surprise_fit_rows: usize,
}

fn all_supervisor_ids() -> Vec<String> {
    Supervisor::ALL.iter().map(|s| s.id().to_string()).collect()
}

fn default_ensemble_size() -> usize {
    5
}

fn default_mc_samples() -> usize {
    32
}

fn default_surprise_fit_rows() -> usize {
    10_000
}

impl Default for SupervisorSettings {
    fn default() -> Self {
        SupervisorSettings {
            enabled: all_supervisor_ids(),
            ensemble_size: default_ensemble_size(),
            mc_samples: default_mc_samples(),
            dissector: DissectorConfig::default(),
            autoencoder: AutoencoderSupervisorConfig::default(),
            surprise_fit_rows: default_surprise_fit_rows(),
        }
    }
}

/// Sizes of the test-set families; the ambiguous family is the generated
/// test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestSetConfig {
    pub nominal: usize,
    pub adversarial: usize,
    pub corrupted: usize,
    pub invalid: usize,
    #[serde(default)]
    pub attack: AttackConfig,
    #[serde(default = "default_corruptions")]
    pub corruptions: Vec<CorruptionKind>,
    #[serde(default = "default_severity")]
    pub severity: usize,
    #[serde(default)]
    pub severity_table: SeverityTable,
}

fn default_corruptions() -> Vec<CorruptionKind> {
    CorruptionKind::ALL.to_vec()
}

fn default_severity() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub version: u32,
    pub seed: u64,
    pub data: DataConfig,
    pub generation: GenerationConfig,
    pub classifier: ClassifierSettings,
    #[serde(default)]
    pub supervisors: SupervisorSettings,
    pub test_sets: TestSetConfig,
    pub output: PathBuf,
}

impl BenchConfig {
    pub fn from_json(text: &str, origin: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|source| ConfigError::Parse {
            path: origin.into(),
            source,
        })
    }

    /// Reads and validates a config file.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let config = Self::from_json(&text, &path.display().to_string())?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Hex sha256 of the compact JSON form with `output` blanked and the
    /// data directories canonicalized.
    pub fn digest(&self) -> String {
        let mut view = self.clone();
        view.output = PathBuf::new();
        for dir in [&mut view.data.nominal_dir, &mut view.data.foreign_dir] {
            if let Ok(c) = std::fs::canonicalize(&*dir) {
                *dir = c;
            }
        }
        let bytes = serde_json::to_vec(&view).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn pairs(&self) -> Vec<ClassPair> {
        self.generation
            .pairs
            .iter()
            .map(|[a, b]| ClassPair::new(*a, *b, self.data.name.clone()).expect("validated pair"))
            .collect()
    }

    pub fn supervisors(&self) -> Vec<Supervisor> {
        let enabled: Vec<Supervisor> = self.supervisors.enabled.iter().filter_map(|s| s.parse().ok()).collect();
        Supervisor::ALL.into_iter().filter(|s| enabled.contains(s)).collect()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.version != CONFIG_VERSION {
            return Err(invalid(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version)));
        }
        for (dir, what) in [(&self.data.nominal_dir, "nominal"), (&self.data.foreign_dir, "foreign")] {
            for file in ["train-images-idx3-ubyte", "train-labels-idx1-ubyte", "t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"] {
                if !dir.join(file).is_file() {
                    return Err(invalid(format!("{what} dataset file {} does not exist", dir.join(file).display())));
                }
            }
        }
        let g = &self.generation;
        if g.pairs.is_empty() {
            return Err(invalid("generation.pairs is empty"));
        }
        for (i, [a, b]) in g.pairs.iter().enumerate() {
            ClassPair::new(*a, *b, self.data.name.clone()).map_err(|e| invalid(format!("generation.pairs[{i}]: {e}")))?;
            if a.max(b) >= &10 {
                return Err(invalid(format!("generation.pairs[{i}]: class out of range 0..10")));
            }
            let key = |p: &[usize; 2]| (p[0].min(p[1]), p[0].max(p[1]));
            if g.pairs[..i].iter().any(|p| key(p) == key(&[*a, *b])) {
                return Err(invalid(format!("generation.pairs[{i}]: duplicate pair ({a}, {b})")));
            }
        }
        if g.raae_seeds.is_empty() {
            return Err(invalid("generation.raae_seeds is empty"));
        }
        if g.grid == 0 {
            return Err(invalid("generation.grid must be positive"));
        }
        for (d, name) in [(g.delta_train, "delta_train"), (g.delta_test, "delta_test")] {
            if !(d > 0.0 && d < 1.0) {
                return Err(invalid(format!("generation.{name} must lie in (0, 1)")));
            }
        }
        let c = &self.classifier;
        if c.architectures.is_empty() || c.repetitions == 0 {
            return Err(invalid("classifier needs at least one architecture and one repetition"));
        }
        for (i, a) in c.architectures.iter().enumerate() {
            if a.hidden.is_empty() || a.hidden.contains(&0) {
                return Err(invalid(format!("classifier.architectures[{i}]: hidden widths must be positive and non-empty")));
            }
            if a.name.is_empty() || !a.name.chars().all(|ch| ch.is_ascii_alphanumeric() || ch == '-' || ch == '_') {
                return Err(invalid(format!("classifier.architectures[{i}]: name must be [A-Za-z0-9_-]+")));
            }
            if c.architectures[..i].iter().any(|b| b.name == a.name) {
                return Err(invalid(format!("classifier.architectures[{i}]: duplicate name '{}'", a.name)));
            }
        }
        if !(0.0..1.0).contains(&c.dropout) {
            return Err(invalid("classifier.dropout must lie in [0, 1)"));
        }
        let s = &self.supervisors;
        for id in &s.enabled {
            id.parse::<Supervisor>().map_err(|_| invalid(format!("supervisors.enabled: unknown supervisor '{id}'")))?;
        }
        if self.supervisors().iter().any(|v| v.is_ensemble()) && s.ensemble_size < 2 {
            return Err(invalid("supervisors.ensemble_size must be at least 2"));
        }
        if s.mc_samples < 2 {
            return Err(invalid("supervisors.mc_samples must be at least 2"));
        }
        let t = &self.test_sets;
        if !(1..=5).contains(&t.severity) {
            return Err(invalid("test_sets.severity must lie in 1..=5"));
        }
        if t.corrupted > 0 && t.corruptions.is_empty() {
            return Err(invalid("test_sets.corruptions is empty"));
        }
        if t.nominal == 0 {
            return Err(invalid("test_sets.nominal must be positive"));
        }
        if t.nominal + t.adversarial + t.corrupted > 10_000 {
            return Err(invalid("nominal, adversarial and corrupted sources together exceed the 10000 test images"));
        }
        Ok(())
    }
}
