//! rAAE training, validation, sampling plans and ambiguous dataset files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ambiguess_core::datasets::Provenance;
use ambiguess_core::raae::{train_raae, validate_raae, ClassPair, PairData, RaaeModel, Verdict};
use ambiguess_core::rng::derive_seed;
use ambiguess_core::sampler::{build_plan, draw_samples, AmbiguousSample, SamplingPlan};
use ambiguess_core::{SeededRng, Tensor};
use anyhow::{anyhow, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::BenchConfig;
use crate::data::{self, split_evenly, SplitSidecar, CLASSES};
use crate::log::Logger;

/// Held-out points encoded per model for the latent diagnostics.
const LATENT_POINTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RaaeRun {
    pub seed: u64,
    pub real_fake_accuracy: f64,
    pub class_accuracy: f64,
    pub accepted: bool,
    pub train_rows: usize,
    pub test_rows: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSummary {
    pub pair: (usize, usize),
    pub trained: usize,
    pub accepted: usize,
    pub skipped: bool,
    pub warning: Option<String>,
    pub runs: Vec<RaaeRun>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSummary {
    pub config_digest: String,
    pub train_rows: usize,
    pub test_rows: usize,
    pub pairs: Vec<PairSummary>,
}

pub fn generated_dir(config: &BenchConfig) -> PathBuf {
    config.output.join("generated")
}

pub fn raae_path(config: &BenchConfig, pair: &ClassPair, seed: u64) -> PathBuf {
    config.output.join("raae").join(format!("{}-{}-seed{seed}.ambg", pair.c1, pair.c2))
}

fn latent_dir(config: &BenchConfig) -> PathBuf {
    config.output.join("latent")
}

/// Trains (or reloads) one rAAE and attaches its validation verdict.
fn trained_raae(
    config: &BenchConfig,
    digest: &str,
    pair: &ClassPair,
    seed: u64,
    train: &PairData,
    held_out: &PairData,
    log: &Logger,
) -> Result<RaaeModel> {
    let path = raae_path(config, pair, seed);
    if let Ok((model, meta)) = checkpoint::load_raae(&path) {
        if meta.config_digest() == digest && model.verdict.is_some() {
            log.info(format_args!("rAAE ({}, {}) seed {seed}: reusing {}", pair.c1, pair.c2, path.display()));
            return Ok(model);
        }
    }
    let key = format!("raae/{}-{}/{seed}", pair.c1, pair.c2);
    let (mut model, _) = train_raae(pair, train, &config.generation.raae, derive_seed(config.seed, &key))
        .with_context(|| format!("training rAAE ({}, {}) seed {seed}", pair.c1, pair.c2))?;
    let verdict = validate_raae(&model, held_out, derive_seed(config.seed, &format!("validate/{key}")))?;
    model.verdict = Some(verdict);
    log.info(format_args!(
        "rAAE ({}, {}) seed {seed}: real/fake {:.3}, class {:.3}, {}",
        pair.c1,
        pair.c2,
        verdict.real_fake_accuracy,
        verdict.class_accuracy,
        if verdict.accepted { "accepted" } else { "rejected" }
    ));
    checkpoint::save_raae(&path, &model, digest)?;
    Ok(model)
}

struct Draws {
    train: Vec<AmbiguousSample>,
    test: Vec<AmbiguousSample>,
    plan: SamplingPlan,
}

fn draw(config: &BenchConfig, model: &RaaeModel, seed: u64, quota: (usize, usize)) -> Result<Draws> {
    let g = &config.generation;
    let pair = &model.pair;
    let run = |split: &str, delta: f64, n: usize| -> Result<(Vec<AmbiguousSample>, SamplingPlan)> {
        let what = format!("{split} draws for ({}, {}) seed {seed}", pair.c1, pair.c2);
        let plan = build_plan(model, g.grid, g.grid, delta).with_context(|| format!("planning {what}"))?;
        let mut rng = SeededRng::new(derive_seed(config.seed, &format!("draw/{split}/{}-{}/{seed}", pair.c1, pair.c2)));
        let samples = draw_samples(model, &plan, n, delta, &mut rng)
            .map_err(|e| anyhow!("{what}: {} of {n} accepted: {}", e.samples.len(), e.error))?;
        Ok((samples, plan))
    };
    let (train, plan) = run("train", g.delta_train, quota.0)?;
    let (test, _) = run("test", g.delta_test, quota.1)?;
    Ok(Draws { train, test, plan })
}

fn write_latent_csvs(dir: &Path, model: &RaaeModel, seed: u64, held_out: &PairData, draws: &Draws) -> Result<()> {
    fs::create_dir_all(dir)?;
    let stem = format!("{}-{}-seed{seed}", model.pair.c1, model.pair.c2);
    let n = held_out.len().min(LATENT_POINTS);
    let z = model.autoencoder.encode(&held_out.images.slice_rows(0, n))?;
    let mut s = String::from("x,y,class\n");
    for (r, side) in z.iter_rows().zip(&held_out.sides) {
        writeln!(s, "{},{},{}", r[0], r[1], model.pair.class(*side))?;
    }
    fs::write(dir.join(format!("{stem}-encoded.csv")), s)?;
    let mut s = String::from("x0,x1,y0,y1,probability\n");
    for (c, p) in draws.plan.cells.iter().zip(&draws.plan.probabilities) {
        let [x0, x1, y0, y1] = c.bounds;
        writeln!(s, "{x0},{x1},{y0},{y1},{p}")?;
    }
    fs::write(dir.join(format!("{stem}-cells.csv")), s)?;
    let mut s = String::from("x,y,p1\n");
    for d in &draws.test {
        writeln!(s, "{},{},{}", d.latent[0], d.latent[1], d.label.p1)?;
    }
    fs::write(dir.join(format!("{stem}-draws.csv")), s)?;
    Ok(())
}

fn assemble(
    split: &str,
    delta: f64,
    parts: &[(&RaaeModel, u64, &[AmbiguousSample])],
    provenance: &Provenance,
    digest: &str,
) -> Result<(Tensor, Tensor, SplitSidecar)> {
    let n: usize = parts.iter().map(|p| p.2.len()).sum();
    let mut images = Vec::with_capacity(n * ambiguess_core::IMAGE_PIXELS);
    let mut probs = Vec::with_capacity(n * CLASSES);
    let mut sidecar = SplitSidecar {
        schema_version: data::SIDECAR_SCHEMA,
        config_digest: digest.into(),
        split: split.into(),
        delta_max: delta,
        provenance: provenance.clone(),
        row_pairs: Vec::with_capacity(n),
        row_raae_seeds: Vec::with_capacity(n),
        row_latents: Vec::with_capacity(n),
    };
    for (model, seed, samples) in parts {
        for s in *samples {
            images.extend_from_slice(&s.image);
            probs.extend(s.label.embed(CLASSES));
            sidecar.row_pairs.push((model.pair.c1, model.pair.c2));
            sidecar.row_raae_seeds.push(*seed);
            sidecar.row_latents.push(s.latent);
        }
    }
    let side = ambiguess_core::IMAGE_SIDE;
    Ok((Tensor::new(vec![n, side, side], images)?, Tensor::new(vec![n, CLASSES], probs)?, sidecar))
}

/// Trains every configured rAAE, keeps the accepted ones and writes the
/// ambiguous train and test splits plus `summary.json`.
pub fn generate(config: &BenchConfig, log: &Logger) -> Result<GenerateSummary> {
    let digest = config.digest();
    let g = &config.generation;
    log.info(format_args!("loading {}", config.data.nominal_dir.display()));
    let nominal = data::load_dataset(&config.data.nominal_dir)?;
    let pairs = config.pairs();
    let pair_data: Vec<(PairData, PairData)> = pairs
        .iter()
        .map(|p| {
            (
                PairData::extract(p, &nominal.train.images, &nominal.train.labels),
                PairData::extract(p, &nominal.test.images, &nominal.test.labels),
            )
        })
        .collect();

    let tasks: Vec<(usize, u64)> = (0..pairs.len()).flat_map(|p| g.raae_seeds.iter().map(move |&s| (p, s))).collect();
    let models: Vec<RaaeModel> = tasks
        .par_iter()
        .map(|&(p, seed)| trained_raae(config, &digest, &pairs[p], seed, &pair_data[p].0, &pair_data[p].1, log))
        .collect::<Result<_>>()?;

    let accepted_per_pair: Vec<Vec<usize>> = (0..pairs.len())
        .map(|p| (0..tasks.len()).filter(|&t| tasks[t].0 == p && models[t].is_accepted()).collect())
        .collect();
    let live: Vec<usize> = (0..pairs.len()).filter(|&p| !accepted_per_pair[p].is_empty()).collect();
    let train_share = split_evenly(g.train_samples, live.len());
    let test_share = split_evenly(g.test_samples, live.len());
    let mut quotas = vec![(0usize, 0usize); tasks.len()];
    for (k, &p) in live.iter().enumerate() {
        let acc = &accepted_per_pair[p];
        for ((&t, a), b) in acc.iter().zip(split_evenly(train_share[k], acc.len())).zip(split_evenly(test_share[k], acc.len())) {
            quotas[t] = (a, b);
        }
    }

    let accepted: Vec<usize> = (0..tasks.len()).filter(|&t| models[t].is_accepted()).collect();
    let draws: Vec<Draws> = accepted
        .par_iter()
        .map(|&t| draw(config, &models[t], tasks[t].1, quotas[t]))
        .collect::<Result<_>>()?;
    for (&t, d) in accepted.iter().zip(&draws) {
        write_latent_csvs(&latent_dir(config), &models[t], tasks[t].1, &pair_data[tasks[t].0].1, d)?;
    }

    let provenance = Provenance {
        config_digest: digest.clone(),
        seeds: g.raae_seeds.clone(),
        pairs: live.iter().map(|&p| (pairs[p].c1, pairs[p].c2)).collect(),
        notes: vec![format!("{} accepted of {} trained rAAEs", accepted.len(), tasks.len())],
    };
    let dir = generated_dir(config);
    for (split, delta) in [("train", g.delta_train), ("test", g.delta_test)] {
        let parts: Vec<(&RaaeModel, u64, &[AmbiguousSample])> = accepted
            .iter()
            .zip(&draws)
            .map(|(&t, d)| (&models[t], tasks[t].1, if split == "train" { &d.train[..] } else { &d.test[..] }))
            .collect();
        let (images, probs, sidecar) = assemble(split, delta, &parts, &provenance, &digest)?;
        data::write_split(&dir, &images, &probs, &sidecar)?;
        log.info(format_args!("wrote {} {split} rows to {}", images.rows(), dir.display()));
    }

    let mut summary = GenerateSummary {
        config_digest: digest,
        train_rows: draws.iter().map(|d| d.train.len()).sum(),
        test_rows: draws.iter().map(|d| d.test.len()).sum(),
        pairs: Vec::new(),
    };
    for (p, pair) in pairs.iter().enumerate() {
        let runs: Vec<RaaeRun> = (0..tasks.len())
            .filter(|&t| tasks[t].0 == p)
            .map(|t| {
                let v: Verdict = models[t].verdict.expect("validated");
                RaaeRun {
                    seed: tasks[t].1,
                    real_fake_accuracy: v.real_fake_accuracy,
                    class_accuracy: v.class_accuracy,
                    accepted: v.accepted,
                    train_rows: quotas[t].0,
                    test_rows: quotas[t].1,
                }
            })
            .collect();
        let accepted = runs.iter().filter(|r| r.accepted).count();
        let warning = (accepted == 0).then(|| format!("no rAAE for ({}, {}) passed validation; pair skipped", pair.c1, pair.c2));
        if let Some(w) = &warning {
            log.warn(w);
        }
        summary.pairs.push(PairSummary {
            pair: (pair.c1, pair.c2),
            trained: runs.len(),
            accepted,
            skipped: accepted == 0,
            warning,
            runs,
        });
    }
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("summary.json"), serde_json::to_string_pretty(&summary)? + "\n")?;
    Ok(summary)
}
