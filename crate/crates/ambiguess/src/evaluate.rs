//! Top-1, Top-2, Top-Pair and mean entropy of clean and mixed-ambiguous
//! classifiers on the ambiguous and nominal test sets.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use ambiguess_core::metrics::{hard_labels, mean_entropy, top_k_accuracy, top_pair_accuracy};
use ambiguess_core::models::ClassifierModel;
use anyhow::Result;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::BenchConfig;
use crate::log::Logger;
use crate::report::Stat;
use crate::train::{self, Inputs, TrainingSet};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguityRow {
    pub architecture: String,
    pub training_set: String,
    pub test_set: String,
    pub top1: Stat,
    pub top2: Stat,
    /// Undefined on nominal inputs.
    pub top_pair: Option<Stat>,
    pub entropy: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AmbiguityReport {
    pub config_digest: String,
    pub rows: Vec<AmbiguityRow>,
}

impl AmbiguityReport {
    pub fn row(&self, architecture: &str, training_set: TrainingSet, test_set: &str) -> Option<&AmbiguityRow> {
        self.rows
            .iter()
            .find(|r| r.architecture == architecture && r.training_set == training_set.as_str() && r.test_set == test_set)
    }
}

#[derive(Debug, Clone, Copy)]
struct Scores {
    top1: f64,
    top2: f64,
    top_pair: Option<f64>,
    entropy: f64,
}

fn evaluate_model(model: &ClassifierModel, inputs: &Inputs) -> Result<[Scores; 2]> {
    let amb = &inputs.ambiguous_test;
    let probs = model.predict(&amb.images.matrix())?;
    let hard = hard_labels(&amb.labels.probs);
    let ambiguous = Scores {
        top1: top_k_accuracy(&probs, &hard, 1)?,
        top2: top_k_accuracy(&probs, &hard, 2)?,
        top_pair: Some(top_pair_accuracy(&amb.labels.probs, &probs)?),
        entropy: mean_entropy(&probs)?,
    };
    let nom = &inputs.nominal.test;
    let probs = model.predict(&nom.images)?;
    let nominal = Scores {
        top1: top_k_accuracy(&probs, &nom.labels, 1)?,
        top2: top_k_accuracy(&probs, &nom.labels, 2)?,
        top_pair: None,
        entropy: mean_entropy(&probs)?,
    };
    Ok([ambiguous, nominal])
}

fn stat(values: impl Iterator<Item = f64>) -> Stat {
    Stat::of(&values.collect::<Vec<_>>()).expect("at least one repetition")
}

pub fn evaluate_ambiguity(config: &BenchConfig, log: &Logger) -> Result<AmbiguityReport> {
    let inputs = Inputs::load(config, log)?;
    evaluate_with(config, &inputs, log)
}

pub fn evaluate_with(config: &BenchConfig, inputs: &Inputs, log: &Logger) -> Result<AmbiguityReport> {
    let c = &config.classifier;
    let units: Vec<(usize, TrainingSet, usize)> = (0..c.architectures.len())
        .flat_map(|a| {
            [TrainingSet::Mixed, TrainingSet::Clean]
                .into_iter()
                .flat_map(move |set| (0..c.repetitions).map(move |r| (a, set, r)))
        })
        .collect();
    let scores: Vec<[Scores; 2]> = units
        .par_iter()
        .map(|&(a, set, r)| {
            let model = train::classifier(config, inputs, &c.architectures[a], set, r, log)?;
            evaluate_model(&model, inputs)
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for (a, arch) in c.architectures.iter().enumerate() {
        for set in [TrainingSet::Mixed, TrainingSet::Clean] {
            let runs: Vec<&[Scores; 2]> =
                units.iter().zip(&scores).filter(|(u, _)| u.0 == a && u.1 == set).map(|(_, s)| s).collect();
            for (k, test_set) in ["ambiguous", "nominal"].into_iter().enumerate() {
                rows.push(AmbiguityRow {
                    architecture: arch.name.clone(),
                    training_set: set.as_str().into(),
                    test_set: test_set.into(),
                    top1: stat(runs.iter().map(|s| s[k].top1)),
                    top2: stat(runs.iter().map(|s| s[k].top2)),
                    top_pair: (k == 0).then(|| stat(runs.iter().map(|s| s[k].top_pair.expect("ambiguous")))),
                    entropy: stat(runs.iter().map(|s| s[k].entropy)),
                });
            }
        }
    }
    let report = AmbiguityReport {
        config_digest: inputs.digest.clone(),
        rows,
    };
    let dir = ambiguity_dir(config);
    fs::create_dir_all(&dir)?;
    fs::write(dir.join("ambiguity.md"), render_markdown(&report))?;
    fs::write(dir.join("ambiguity.csv"), render_csv(&report))?;
    log.info(format_args!("wrote {}", dir.display()));
    Ok(report)
}

pub fn ambiguity_dir(config: &BenchConfig) -> PathBuf {
    config.output.join("ambiguity")
}

pub fn render_markdown(report: &AmbiguityReport) -> String {
    let mut out = String::from("# Evaluation of ambiguity\n\n");
    out.push_str("| Architecture | Training set | Test set | Top-1 | Top-2 | Top-Pair | Entropy |\n");
    out.push_str("|---|---|---|---|---|---|---|\n");
    for r in &report.rows {
        writeln!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} |",
            r.architecture,
            r.training_set,
            r.test_set,
            r.top1.markdown(),
            r.top2.markdown(),
            r.top_pair.as_ref().map_or_else(|| "n.a.".into(), Stat::markdown),
            r.entropy.markdown()
        )
        .unwrap();
    }
    out
}

pub fn render_csv(report: &AmbiguityReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["architecture", "training_set", "test_set", "metric", "mean", "std", "n"]).unwrap();
    for r in &report.rows {
        let metrics = [("top1", Some(&r.top1)), ("top2", Some(&r.top2)), ("top_pair", r.top_pair.as_ref()), ("entropy", Some(&r.entropy))];
        for (name, s) in metrics {
            let (mean, std, n) = match s {
                Some(s) => (s.mean.to_string(), s.std.map(|v| v.to_string()).unwrap_or_default(), s.n.to_string()),
                None => ("n.a.".into(), String::new(), "0".into()),
            };
            w.write_record([r.architecture.as_str(), &r.training_set, &r.test_set, name, &mean, &std, &n]).unwrap();
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}
