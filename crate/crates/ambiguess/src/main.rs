use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use ambiguess::config::{BenchConfig, ConfigError};
use ambiguess::log::Logger;
use ambiguess::{bench, checkpoint, evaluate, generate, idx, report, svg};
use ambiguess_core::datasets::{corrupt, fgsm_attack, pgd_attack, CorruptionKind, SeverityTable};
use ambiguess_core::SeededRng;
use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::json;

#[derive(Parser)]
#[command(name = "ambiguess", version, about = "Ambiguous test generation and DNN supervisor benchmark")]
struct Cli {
    /// JSON config (required by generate, evaluate-ambiguity and bench-supervisors).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config's.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Suppress progress messages.
    #[arg(long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Fgsm,
    Pgd,
}

#[derive(Subcommand)]
enum Command {
    /// Train rAAEs and write the ambiguous train and test splits.
    Generate,
    /// Train clean and mixed-ambiguous classifiers and tabulate Top-1/Top-2/Top-Pair/entropy.
    EvaluateAmbiguity,
    /// Score all configured supervisors and write score files and the AUC-ROC report.
    BenchSupervisors,
    /// Rebuild the AUC-ROC report from a score directory.
    Report {
        /// Score directory (defaults to <out>/scores).
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Also render latent-space SVGs from this directory of latent CSVs.
        #[arg(long)]
        latent: Option<PathBuf>,
        /// Combine score files produced under different configs.
        #[arg(long)]
        force: bool,
    },
    /// Attack images with FGSM or PGD against a classifier checkpoint.
    Attack {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        images: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, value_enum, default_value = "fgsm")]
        method: Method,
        #[arg(long, default_value_t = 0.2)]
        epsilon: f64,
        #[arg(long, default_value_t = 0.02)]
        step: f64,
        #[arg(long, default_value_t = 20)]
        iterations: usize,
    },
    /// Apply a label-preserving corruption to images.
    Corrupt {
        #[arg(long)]
        images: PathBuf,
        /// gaussian-noise, rotation, box-blur or brightness.
        #[arg(long)]
        kind: String,
        #[arg(long, default_value_t = 3)]
        severity: usize,
    },
}

/// Validation problems exit with 1, everything else with 2.
struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl<E: Into<anyhow::Error>> From<E> for Failure {
    fn from(e: E) -> Self {
        let error = e.into();
        let code = if error.downcast_ref::<ConfigError>().is_some() { 1 } else { 2 };
        Failure { code, error }
    }
}

fn validation(msg: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        error: ConfigError::Invalid(msg.into()).into(),
    }
}

fn load_config(cli: &Cli) -> Result<BenchConfig, Failure> {
    let path = cli.config.as_ref().ok_or_else(|| validation("this command needs --config"))?;
    let mut config = BenchConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output = out.clone();
    }
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<PathBuf, Failure> {
    if let Some(out) = &cli.out {
        return Ok(out.clone());
    }
    match &cli.config {
        Some(_) => Ok(load_config(cli)?.output),
        None => Ok(PathBuf::from("out")),
    }
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

fn run(cli: &Cli, log: &Logger) -> Result<(), Failure> {
    match &cli.command {
        Command::Generate => {
            let config = load_config(cli)?;
            let summary = generate::generate(&config, log)?;
            log.info(format_args!("{} train rows, {} test rows", summary.train_rows, summary.test_rows));
        }
        Command::EvaluateAmbiguity => {
            let config = load_config(cli)?;
            let report = evaluate::evaluate_ambiguity(&config, log)?;
            print!("{}", evaluate::render_markdown(&report));
        }
        Command::BenchSupervisors => {
            let config = load_config(cli)?;
            let report = bench::bench_supervisors(&config, log)?;
            print!("{}", report::render_markdown(&report));
        }
        Command::Report { scores, latent, force } => {
            let out = out_dir(cli)?;
            let scores = scores.clone().unwrap_or_else(|| out.join("scores"));
            let runs = report::read_score_dir(&scores)?;
            let built = match report::build_report(&runs, *force) {
                Err(e @ report::ReportError::MixedDigests(_)) => return Err(validation(e.to_string())),
                other => other?,
            };
            let dir = out.join("report");
            report::write_report(&dir, &built)?;
            if let Some(latent) = latent {
                for path in svg::write_latent_svgs(latent, &dir)? {
                    log.info(format_args!("wrote {}", path.display()));
                }
            }
            print!("{}", report::render_markdown(&built));
        }
        Command::Attack {
            model,
            images,
            labels,
            method,
            epsilon,
            step,
            iterations,
        } => {
            let out = out_dir(cli)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (classifier, _) = checkpoint::load_classifier(model)?;
            let x = idx::load_images(images)?;
            let y = idx::load_labels(labels)?;
            if x.shape()[0] != y.len() {
                return Err(validation(format!("{} images but {} labels", x.shape()[0], y.len())));
            }
            let result = match method {
                Method::Fgsm => fgsm_attack(&classifier, &x, &y, *epsilon)?,
                Method::Pgd => pgd_attack(&classifier, &x, &y, *epsilon, *step, *iterations)?,
            };
            idx::save_images(&out.join("adversarial-images-idx3-ubyte"), &result.images.images)?;
            idx::save_labels(&out.join("adversarial-labels-idx1-ubyte"), &y)?;
            let name = match method {
                Method::Fgsm => "fgsm",
                Method::Pgd => "pgd",
            };
            write_json(
                &out.join("attack.json"),
                &json!({ "method": name, "epsilon": epsilon, "rows": y.len(), "success_rate": result.success_rate() }),
            )?;
            log.info(format_args!("attack success rate {:.4}", result.success_rate()));
        }
        Command::Corrupt { images, kind, severity } => {
            let out = out_dir(cli)?;
            let kind: CorruptionKind = kind.parse().map_err(|e: ambiguess_core::Error| validation(e.to_string()))?;
            if !(1..=5).contains(severity) {
                return Err(validation(format!("severity {severity} outside 1..=5")));
            }
            let x = idx::load_images(images)?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut rng = SeededRng::new(cli.seed.unwrap_or(0));
            let set = corrupt(&x, kind, *severity, &SeverityTable::default(), &mut rng)?;
            idx::save_images(&out.join("corrupted-images-idx3-ubyte"), &set.images)?;
            log.info(format_args!("wrote {} corrupted images", set.len()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let log = Logger::new(cli.quiet);
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli, &log) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
