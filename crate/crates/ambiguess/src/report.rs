//! Supervisor tables rebuilt purely from score files.
//!
//! A score directory holds one `<architecture>-rep<r>.csv` per run with
//! columns `supervisor,input_index,score,test_set`, and a sibling `.json`
//! with the run's metadata and the cells it could not produce.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use ambiguess_core::datasets::SourceTag;
use ambiguess_core::metrics::auc_roc;
use ambiguess_core::supervisors::Supervisor;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Test-set families in column order.
pub const FAMILIES: [SourceTag; 4] = [
    SourceTag::Ambiguous,
    SourceTag::Adversarial,
    SourceTag::Corrupted,
    SourceTag::Invalid,
];

pub fn family_header(tag: SourceTag) -> &'static str {
    match tag {
        SourceTag::Ambiguous => "amb.",
        SourceTag::Adversarial => "adv.",
        SourceTag::Corrupted => "corr.",
        SourceTag::Invalid => "inv.",
        SourceTag::Nominal => "nom.",
    }
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {message}")]
    Malformed { path: String, message: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("score files come from different configs ({0}); pass --force to combine them")]
    MixedDigests(String),
}

fn malformed(path: &Path, message: impl Into<String>) -> ReportError {
    ReportError::Malformed {
        path: path.display().to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NotAvailable {
    pub supervisor: String,
    pub test_set: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunMeta {
    pub config_digest: String,
    pub architecture: String,
    pub repetition: usize,
    pub not_available: Vec<NotAvailable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub supervisor: String,
    pub input_index: usize,
    pub score: f64,
    pub test_set: String,
}

/// One run's scores grouped by supervisor and test set, in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRun {
    pub meta: RunMeta,
    pub scores: BTreeMap<(Supervisor, SourceTag), Vec<f64>>,
}

pub fn score_file_stem(architecture: &str, repetition: usize) -> String {
    format!("{architecture}-rep{repetition}")
}

pub fn write_run(dir: &Path, run: &ScoreRun) -> Result<(), ReportError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let stem = score_file_stem(&run.meta.architecture, run.meta.repetition);
    let csv_path = dir.join(format!("{stem}.csv"));
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| malformed(&csv_path, e.to_string()))?;
    for ((sup, tag), scores) in &run.scores {
        for (i, s) in scores.iter().enumerate() {
            w.serialize(ScoreRecord {
                supervisor: sup.id().into(),
                input_index: i,
                score: *s,
                test_set: tag.as_str().into(),
            })
            .map_err(|e| malformed(&csv_path, e.to_string()))?;
        }
    }
    w.flush().map_err(io(&csv_path))?;
    let json_path = dir.join(format!("{stem}.json"));
    let json = serde_json::to_string_pretty(&run.meta).expect("metadata serializes");
    fs::write(&json_path, json + "\n").map_err(io(&json_path))
}

fn read_run(csv_path: &Path) -> Result<ScoreRun, ReportError> {
    let json_path = csv_path.with_extension("json");
    let raw = fs::read(&json_path).map_err(|source| ReportError::Io {
        path: json_path.display().to_string(),
        source,
    })?;
    let meta: RunMeta = serde_json::from_slice(&raw).map_err(|e| malformed(&json_path, e.to_string()))?;
    let mut reader = csv::Reader::from_path(csv_path).map_err(|e| malformed(csv_path, e.to_string()))?;
    let mut scores: BTreeMap<(Supervisor, SourceTag), Vec<f64>> = BTreeMap::new();
    for (line, rec) in reader.deserialize::<ScoreRecord>().enumerate() {
        let rec = rec.map_err(|e| malformed(csv_path, e.to_string()))?;
        let at = |m: String| malformed(csv_path, format!("record {}: {m}", line + 1));
        let sup: Supervisor = rec.supervisor.parse().map_err(|_| at(format!("unknown supervisor '{}'", rec.supervisor)))?;
        let tag: SourceTag = rec.test_set.parse().map_err(|_| at(format!("unknown test set '{}'", rec.test_set)))?;
        if !rec.score.is_finite() {
            return Err(at("non-finite score".into()));
        }
        let column = scores.entry((sup, tag)).or_default();
        if rec.input_index != column.len() {
            return Err(at(format!("input_index {} out of sequence", rec.input_index)));
        }
        column.push(rec.score);
    }
    Ok(ScoreRun { meta, scores })
}

/// All runs in `dir`, ordered by file name.
pub fn read_score_dir(dir: &Path) -> Result<Vec<ScoreRun>, ReportError> {
    let entries = fs::read_dir(dir).map_err(|source| ReportError::Io {
        path: dir.display().to_string(),
        source,
    })?;
    let mut files: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    files.iter().map(|p| read_run(p)).collect()
}

/// Mean, sample standard deviation and count of a set of values.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    /// Present whenever `n > 1`.
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Stat> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt());
        Some(Stat { mean, std, n })
    }

    /// `0.97 ± 0.01 (n=6)`.
    pub fn markdown(&self) -> String {
        match self.std {
            Some(s) => format!("{:.2} ± {:.2} (n={})", self.mean, s, self.n),
            None => format!("{:.2} (n={})", self.mean, self.n),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Cell {
    pub auc: Option<Stat>,
    /// Why runs produced no value, deduplicated.
    pub reasons: Vec<String>,
}

impl Cell {
    pub fn markdown(&self) -> String {
        self.auc.as_ref().map_or_else(|| "n.a.".into(), Stat::markdown)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SupervisorTable {
    /// `all` or an architecture name.
    pub scope: String,
    pub runs: usize,
    pub rows: Vec<(Supervisor, [Cell; 4])>,
}

impl SupervisorTable {
    pub fn cell(&self, supervisor: Supervisor, family: SourceTag) -> Option<&Cell> {
        let col = FAMILIES.iter().position(|f| *f == family)?;
        self.rows.iter().find(|(s, _)| *s == supervisor).map(|(_, cells)| &cells[col])
    }

    pub fn mean_auc(&self, supervisor: Supervisor, family: SourceTag) -> Option<f64> {
        self.cell(supervisor, family)?.auc.as_ref().map(|s| s.mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub config_digests: Vec<String>,
    pub architectures: Vec<String>,
    pub overall: SupervisorTable,
    pub per_architecture: Vec<SupervisorTable>,
}

/// AUC of one run's family scores against its nominal scores, or the
/// reason there is none.
fn run_auc(run: &ScoreRun, sup: Supervisor, family: SourceTag) -> Result<f64, String> {
    let recorded = run
        .meta
        .not_available
        .iter()
        .find(|n| n.supervisor == sup.id() && (n.test_set == family.as_str() || n.test_set == "all"));
    if let Some(n) = recorded {
        return Err(n.reason.clone());
    }
    let nominal = run.scores.get(&(sup, SourceTag::Nominal)).ok_or("no nominal scores")?;
    let scores = run.scores.get(&(sup, family)).ok_or("no scores")?;
    auc_roc(scores, nominal).map_err(|e| e.to_string())
}

fn table(scope: &str, runs: &[&ScoreRun], supervisors: &[Supervisor]) -> SupervisorTable {
    let rows = supervisors
        .iter()
        .map(|&sup| {
            let cells = FAMILIES.map(|family| {
                let mut values = Vec::new();
                let mut reasons: Vec<String> = Vec::new();
                for run in runs {
                    match run_auc(run, sup, family) {
                        Ok(v) => values.push(v),
                        Err(r) if !reasons.contains(&r) => reasons.push(r),
                        Err(_) => {}
                    }
                }
                Cell {
                    auc: Stat::of(&values),
                    reasons,
                }
            });
            (sup, cells)
        })
        .collect();
    SupervisorTable {
        scope: scope.into(),
        runs: runs.len(),
        rows,
    }
}

pub fn build_report(runs: &[ScoreRun], force: bool) -> Result<BenchReport, ReportError> {
    let mut digests: Vec<String> = runs.iter().map(|r| r.meta.config_digest.clone()).collect();
    digests.sort();
    digests.dedup();
    if digests.len() > 1 && !force {
        return Err(ReportError::MixedDigests(digests.join(", ")));
    }
    let mut architectures: Vec<String> = Vec::new();
    for r in runs {
        if !architectures.contains(&r.meta.architecture) {
            architectures.push(r.meta.architecture.clone());
        }
    }
    let supervisors: Vec<Supervisor> = Supervisor::ALL
        .into_iter()
        .filter(|s| {
            runs.iter()
                .any(|r| r.scores.keys().any(|(k, _)| k == s) || r.meta.not_available.iter().any(|n| n.supervisor == s.id()))
        })
        .collect();
    let all: Vec<&ScoreRun> = runs.iter().collect();
    let per_architecture = architectures
        .iter()
        .map(|a| {
            let subset: Vec<&ScoreRun> = runs.iter().filter(|r| &r.meta.architecture == a).collect();
            table(a, &subset, &supervisors)
        })
        .collect();
    Ok(BenchReport {
        config_digests: digests,
        overall: table("all", &all, &supervisors),
        architectures,
        per_architecture,
    })
}

fn aggregation_label(report: &BenchReport) -> String {
    let arch = report.architectures.len();
    let runs = report.overall.runs;
    if arch > 0 && runs % arch == 0 {
        format!(
            "averaged over {arch} architecture{} × {} repetition{}",
            if arch == 1 { "" } else { "s" },
            runs / arch,
            if runs / arch == 1 { "" } else { "s" }
        )
    } else {
        format!("averaged over {runs} runs across {arch} architectures")
    }
}

fn markdown_table(out: &mut String, t: &SupervisorTable) {
    out.push_str("| Supervisor |");
    for f in FAMILIES {
        write!(out, " {} |", family_header(f)).unwrap();
    }
    out.push_str("\n|---|");
    out.push_str(&"---|".repeat(FAMILIES.len()));
    out.push('\n');
    for (sup, cells) in &t.rows {
        write!(out, "| {} |", sup.display_name()).unwrap();
        for c in cells {
            write!(out, " {} |", c.markdown()).unwrap();
        }
        out.push('\n');
    }
    let mut notes = Vec::new();
    for (sup, cells) in &t.rows {
        for (f, c) in FAMILIES.iter().zip(cells) {
            if c.auc.is_none() {
                notes.push(format!("- {} / {}: {}", sup.display_name(), family_header(*f), c.reasons.join("; ")));
            }
        }
    }
    if !notes.is_empty() {
        out.push_str("\nNot available:\n\n");
        for n in notes {
            out.push_str(&n);
            out.push('\n');
        }
    }
}

/// AUC-ROC of each supervisor against nominal inputs, mean ± std over runs
/// with the run count in every cell.
pub fn render_markdown(report: &BenchReport) -> String {
    let mut out = String::from("# Supervisor AUC-ROC\n\n");
    if report.overall.rows.is_empty() {
        out.push_str("No score files.\n");
        return out;
    }
    writeln!(out, "All runs, {}.\n", aggregation_label(report)).unwrap();
    markdown_table(&mut out, &report.overall);
    for t in &report.per_architecture {
        writeln!(out, "\n## {}\n\n{} repetition{}.\n", t.scope, t.runs, if t.runs == 1 { "" } else { "s" }).unwrap();
        markdown_table(&mut out, t);
    }
    out
}

pub fn render_csv(report: &BenchReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scope", "supervisor", "test_set", "mean", "std", "n", "note"]).unwrap();
    for t in std::iter::once(&report.overall).chain(&report.per_architecture) {
        for (sup, cells) in &t.rows {
            for (f, c) in FAMILIES.iter().zip(cells) {
                let (mean, std, n) = match &c.auc {
                    Some(s) => (s.mean.to_string(), s.std.map(|v| v.to_string()).unwrap_or_default(), s.n.to_string()),
                    None => ("n.a.".into(), String::new(), "0".into()),
                };
                w.write_record([t.scope.as_str(), sup.id(), f.as_str(), &mean, &std, &n, &c.reasons.join("; ")])
                    .unwrap();
            }
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
}

/// Writes `supervisors.md` and `supervisors.csv` into `dir`.
pub fn write_report(dir: &Path, report: &BenchReport) -> Result<(), ReportError> {
    let io = |path: &Path| {
        let path = path.display().to_string();
        move |source| ReportError::Io { path, source }
    };
    fs::create_dir_all(dir).map_err(io(dir))?;
    let md = dir.join("supervisors.md");
    fs::write(&md, render_markdown(report)).map_err(io(&md))?;
    let csv = dir.join("supervisors.csv");
    fs::write(&csv, render_csv(report)).map_err(io(&csv))
}
