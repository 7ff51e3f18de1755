//! Nominal IDX datasets on disk and the generated ambiguous splits.

use std::fs;
use std::path::{Path, PathBuf};

use ambiguess_core::datasets::{ImageSet, LabelSet, ProbabilisticDataset, Provenance, SourceTag};
use ambiguess_core::Tensor;
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

use crate::idx;

pub const CLASSES: usize = 10;
pub const SIDECAR_SCHEMA: u32 = 1;

/// Flattened images `[n × 784]` with hard labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub images: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Rows `start..end`, clamped to the split.
    pub fn range(&self, start: usize, end: usize) -> Split {
        let end = end.min(self.len());
        let start = start.min(end);
        Split {
            images: self.images.slice_rows(start, end),
            labels: self.labels[start..end].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub train: Split,
    pub test: Split,
}

fn load_split(dir: &Path, prefix: &str) -> Result<Split> {
    let images = idx::load_images(&dir.join(format!("{prefix}-images-idx3-ubyte")))?.flatten_rows();
    let labels = idx::load_labels(&dir.join(format!("{prefix}-labels-idx1-ubyte")))?;
    ensure!(
        images.rows() == labels.len(),
        "{}: {} images but {} labels",
        dir.display(),
        images.rows(),
        labels.len()
    );
    if let Some(l) = labels.iter().find(|l| **l >= CLASSES) {
        bail!("{}: label {l} outside 0..{CLASSES}", dir.display());
    }
    Ok(Split { images, labels })
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    Ok(Dataset {
        train: load_split(dir, "train")?,
        test: load_split(dir, "t10k")?,
    })
}

/// Per-row bookkeeping stored next to a generated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSidecar {
    pub schema_version: u32,
    pub config_digest: String,
    pub split: String,
    pub delta_max: f64,
    pub provenance: Provenance,
    pub row_pairs: Vec<(usize, usize)>,
    pub row_raae_seeds: Vec<u64>,
    pub row_latents: Vec<[f64; 2]>,
}

pub struct SplitPaths {
    pub images: PathBuf,
    pub labels: PathBuf,
    pub sidecar: PathBuf,
}

pub fn split_paths(dir: &Path, split: &str) -> SplitPaths {
    SplitPaths {
        images: dir.join(format!("ambiguous-{split}-images-idx3-ubyte")),
        labels: dir.join(format!("ambiguous-{split}-labels-idx2-float")),
        sidecar: dir.join(format!("ambiguous-{split}.json")),
    }
}

pub fn write_split(dir: &Path, images: &Tensor, probs: &Tensor, sidecar: &SplitSidecar) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = split_paths(dir, &sidecar.split);
    idx::save_images(&p.images, images)?;
    idx::save_probs(&p.labels, probs)?;
    let json = serde_json::to_string_pretty(sidecar)?;
    fs::write(&p.sidecar, json + "\n").with_context(|| format!("writing {}", p.sidecar.display()))
}

/// Reads a generated split back. Stored probabilities are 32-bit, so each
/// row is renormalized over its class pair.
pub fn load_split_dataset(dir: &Path, split: &str) -> Result<(ProbabilisticDataset, SplitSidecar)> {
    let p = split_paths(dir, split);
    let raw = fs::read(&p.sidecar).with_context(|| format!("reading {}", p.sidecar.display()))?;
    let sidecar: SplitSidecar =
        serde_json::from_slice(&raw).with_context(|| format!("parsing {}", p.sidecar.display()))?;
    ensure!(
        sidecar.schema_version == SIDECAR_SCHEMA,
        "{}: unsupported sidecar schema {}",
        p.sidecar.display(),
        sidecar.schema_version
    );
    let images = idx::load_images(&p.images)?;
    let stored = idx::load_probs(&p.labels)?;
    let n = images.shape()[0];
    ensure!(
        stored.rows() == n && sidecar.row_pairs.len() == n && stored.row_len() == CLASSES,
        "{}: row counts disagree between images, labels and sidecar",
        dir.display()
    );
    let mut probs = vec![0.0; n * CLASSES];
    for (i, (&(a, b), row)) in sidecar.row_pairs.iter().zip(stored.iter_rows()).enumerate() {
        let s = row[a] + row[b];
        ensure!(s > 0.0, "{}: row {i} has no mass on its pair", p.labels.display());
        probs[i * CLASSES + a] = row[a] / s;
        probs[i * CLASSES + b] = 1.0 - row[a] / s;
    }
    let labels = LabelSet::new(Tensor::new(vec![n, CLASSES], probs)?, Some(sidecar.row_pairs.clone()))?;
    let dataset = ProbabilisticDataset::new(
        ImageSet::new(images, SourceTag::Ambiguous)?,
        labels,
        sidecar.provenance.clone(),
    )?;
    Ok((dataset, sidecar))
}

/// Splits `total` into `parts` near-equal shares, larger shares first.
pub fn split_evenly(total: usize, parts: usize) -> Vec<usize> {
    if parts == 0 {
        return Vec::new();
    }
    (0..parts).map(|i| total / parts + usize::from(i < total % parts)).collect()
}
