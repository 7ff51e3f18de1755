//! Acceptance run: one PASS/FAIL line per check, grouped by criterion.
//!
//! Criteria 5 and 6 use the desk configuration and reuse its cached
//! artifacts under `<workspace>/out/desk` (override with
//! `AMBIGUESS_DESK_OUT`). Known conflicts are printed as FAIL but do not
//! change the exit status.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use ambiguess::checkpoint;
use ambiguess::config::BenchConfig;
use ambiguess::data::{self, SplitSidecar};
use ambiguess::log::Logger;
use ambiguess::report::BenchReport;
use ambiguess::train::{self, Inputs, TrainingSet};
use ambiguess::{bench, evaluate, generate, idx};
use ambiguess_core::datasets::{fgsm_attack, LabelSet, SourceTag};
use ambiguess_core::metrics::{auc_roc, top_pair_accuracy};
use ambiguess_core::models::{
    build_autoencoder, build_classifier, build_discriminator, classifier_loss, AutoencoderConfig, ClassifierConfig,
    ClassifierModel, DiscriminatorConfig,
};
use ambiguess_core::nn::{dense_forward, Activation, DenseLayer, LossKind, Mlp};
use ambiguess_core::raae::{losses, ClassPair, LatentPrior};
use ambiguess_core::sampler::{build_plan, CellSampler};
use ambiguess_core::supervisors::{
    deepgini, entropy, fit_surprise, pcs, surprise_scores, uncertainty_scores, SurpriseFitState, SurpriseVariant,
};
use ambiguess_core::{SeededRng, Tensor};

const FD_STEP: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
const FD_COORDS: usize = 100;

struct Harness {
    passed: usize,
    failed: usize,
    known: usize,
}

impl Harness {
    fn check(&mut self, criterion: u8, name: &str, ok: bool, detail: impl AsRef<str>) {
        println!("{} [{criterion}] {name}: {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
        if ok {
            self.passed += 1;
        } else {
            self.failed += 1;
        }
    }

    /// A check whose expected outcome contradicts the mathematics; a failure
    /// is reported but tolerated.
    fn known_conflict(&mut self, criterion: u8, name: &str, ok: bool, detail: impl AsRef<str>) {
        if ok {
            self.check(criterion, name, true, detail);
        } else {
            println!("FAIL [{criterion}] {name}: {} (known conflict)", detail.as_ref());
            self.known += 1;
        }
    }

    fn error(&mut self, criterion: u8, name: &str, e: anyhow::Error) {
        self.check(criterion, name, false, format!("error: {e:#}"));
    }
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance").join(name);
    if dir.exists() {
        std::fs::remove_dir_all(&dir).unwrap();
    }
    dir
}

fn secs(t: Instant) -> String {
    format!("{:.1}s", t.elapsed().as_secs_f64())
}

// 1 -------------------------------------------------------------------------

fn appendix_example(h: &mut Harness) {
    let labels = Tensor::from_rows(&[
        vec![0.0, 0.4, 0.0, 0.6, 0.0],
        vec![0.45, 0.0, 0.55, 0.0, 0.0],
        vec![0.0, 0.3, 0.0, 0.7, 0.0],
        vec![0.35, 0.0, 0.0, 0.65, 0.0],
        vec![0.0, 0.0, 0.5, 0.0, 0.5],
        vec![0.2, 0.0, 0.0, 0.8, 0.0],
        vec![0.0, 0.4, 0.0, 0.0, 0.6],
    ])
    .unwrap();
    let preds = Tensor::from_rows(&[
        vec![0.1, 0.45, 0.05, 0.25, 0.15],
        vec![0.4, 0.45, 0.1, 0.02, 0.03],
        vec![0.03, 0.6, 0.2, 0.1, 0.07],
        vec![0.45, 0.05, 0.1, 0.35, 0.05],
        vec![0.06, 0.07, 0.3, 0.2, 0.37],
        vec![0.3, 0.03, 0.02, 0.6, 0.05],
        vec![0.1, 0.35, 0.06, 0.04, 0.45],
    ])
    .unwrap();
    match top_pair_accuracy(&labels, &preds) {
        Ok(acc) => h.check(1, "top-pair worked example", (acc - 5.0 / 7.0).abs() <= 1e-12, format!("{acc:.10} vs 5/7, tol 1e-12")),
        Err(e) => h.error(1, "top-pair worked example", e.into()),
    }
}

// 2 -------------------------------------------------------------------------

fn brute_force_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let mut wins = 0.0;
    for p in pos {
        for n in neg {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (pos.len() * neg.len()) as f64
}

fn metric_oracles(h: &mut Harness) {
    let mut rng = SeededRng::new(2);
    let mut worst = 0.0f64;
    let mut with_ties = 0;
    for _ in 0..1000 {
        let levels = 2 + rng.below(10);
        let (np, nn) = (1 + rng.below(40), 1 + rng.below(40));
        let pos: Vec<f64> = (0..np).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let neg: Vec<f64> = (0..nn).map(|_| rng.below(levels) as f64 / levels as f64).collect();
        let mut all: Vec<f64> = pos.iter().chain(&neg).copied().collect();
        all.sort_by(f64::total_cmp);
        if all.windows(2).any(|w| w[0] == w[1]) {
            with_ties += 1;
        }
        worst = worst.max((auc_roc(&pos, &neg).unwrap() - brute_force_auc(&pos, &neg)).abs());
    }
    h.check(
        2,
        "AUC-ROC vs pairwise oracle",
        worst <= 1e-12 && with_ties > 0,
        format!("1000 cases ({with_ties} with ties), max |diff| {worst:.1e}, tol 1e-12"),
    );

    let c = 10;
    let uniform = vec![1.0 / c as f64; c];
    let mut one_hot = vec![0.0; c];
    one_hot[3] = 1.0;
    let cases = [
        ("entropy(uniform) = ln C", entropy(&uniform), (c as f64).ln()),
        ("DeepGini(uniform) = 1 - 1/C", deepgini(&uniform), 1.0 - 1.0 / c as f64),
        ("PCS(uniform) = 1", pcs(&uniform), 1.0),
        ("entropy(one-hot) = 0", entropy(&one_hot), 0.0),
        ("DeepGini(one-hot) = 0", deepgini(&one_hot), 0.0),
        ("PCS(one-hot) = 0", pcs(&one_hot), 0.0),
    ];
    let worst = cases.iter().map(|(_, got, want)| (got - want).abs()).fold(0.0, f64::max);
    let failing: Vec<&str> = cases.iter().filter(|(_, g, w)| (g - w).abs() > 1e-15).map(|(n, _, _)| *n).collect();
    h.check(
        2,
        "closed-form softmax scores",
        failing.is_empty(),
        format!("6 cases, max |diff| {worst:.1e} (tol 1e-15){}", if failing.is_empty() { String::new() } else { format!(", failing: {failing:?}") }),
    );
}

// 3 -------------------------------------------------------------------------

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn central_diff(mut f: impl FnMut(f64) -> f64) -> f64 {
    (f(FD_STEP) - f(-FD_STEP)) / (2.0 * FD_STEP)
}

/// Whether a relu pre-activation lies close enough to zero for a
/// finite-difference step to cross the kink.
fn near_kink(net: &Mlp, x: &Tensor) -> bool {
    let mut cur = x.clone();
    for layer in &net.layers {
        let affine = DenseLayer::new(layer.weights.clone(), layer.bias.clone(), Activation::Identity).unwrap();
        let pre = dense_forward(&affine, &cur).unwrap();
        if layer.activation == Activation::Relu && pre.data().iter().any(|v| v.abs() < 1e-3) {
            return true;
        }
        cur = pre.map(|v| layer.activation.apply(v));
    }
    false
}

/// Random `(layer, is_bias, index)` parameter coordinates.
fn parameter_coords(net: &Mlp, rng: &mut SeededRng) -> Vec<(usize, bool, usize)> {
    let mut all = Vec::new();
    for (l, layer) in net.layers.iter().enumerate() {
        all.extend((0..layer.weights.len()).map(|i| (l, false, i)));
        all.extend((0..layer.bias.len()).map(|i| (l, true, i)));
    }
    rng.shuffle(&mut all);
    all.truncate(FD_COORDS);
    all
}

fn nudge(net: &mut Mlp, (l, is_bias, i): (usize, bool, usize), delta: f64) {
    let t = if is_bias { &mut net.layers[l].bias } else { &mut net.layers[l].weights };
    t.data_mut()[i] += delta;
}

fn param_grad(g: &ambiguess_core::nn::MlpGradients, (l, is_bias, i): (usize, bool, usize)) -> f64 {
    if is_bias {
        g.biases[l].data()[i]
    } else {
        g.weights[l].data()[i]
    }
}

fn fd_verdict(h: &mut Harness, name: &str, pairs: &[(f64, f64)]) {
    let worst = pairs.iter().map(|&(a, n)| rel_err(a, n)).fold(0.0, f64::max);
    h.check(3, name, pairs.len() == FD_COORDS && worst <= FD_TOL, format!("{} coordinates, max rel err {worst:.1e}, tol 1e-4", pairs.len()));
}

fn mnist_rows(test: &Tensor, start: usize, n: usize) -> Tensor {
    test.slice_rows(start, start + n)
}

fn soft_targets(n: usize, rng: &mut SeededRng) -> Tensor {
    let mut t = vec![0.0; n * 10];
    for r in 0..n {
        let a = rng.below(10);
        let b = (a + 1 + rng.below(9)) % 10;
        let p = rng.uniform_in(0.3, 0.7);
        t[r * 10 + a] = p;
        t[r * 10 + b] = 1.0 - p;
    }
    Tensor::new(vec![n, 10], t).unwrap()
}

/// A classifier and an MNIST batch with no relu unit near its kink.
fn classifier_fixture(images: &Tensor, seed: u64) -> (ClassifierModel, Tensor) {
    let config = ClassifierConfig { hidden: vec![64, 32], ..ClassifierConfig::default() };
    let mut rng = SeededRng::new(seed);
    for attempt in 0..200 {
        let mut model = build_classifier(&config, &mut rng).unwrap();
        for layer in &mut model.net.layers {
            for b in layer.bias.data_mut() {
                *b = rng.uniform_in(-0.2, 0.2);
            }
        }
        let x = mnist_rows(images, attempt * 4, 4);
        if !near_kink(&model.net, &x) {
            return (model, x);
        }
    }
    panic!("no kink-free classifier fixture");
}

fn gradient_suite(h: &mut Harness, test_images: &Tensor) {
    let mut rng = SeededRng::new(3);

    let (model, x) = classifier_fixture(test_images, 31);
    let t = soft_targets(x.rows(), &mut rng);
    let (_, grads) = model.net.loss_and_gradients(&x, &t, LossKind::SoftCrossEntropy).unwrap();
    let pairs: Vec<(f64, f64)> = parameter_coords(&model.net, &mut rng)
        .into_iter()
        .map(|c| {
            let numeric = central_diff(|d| {
                let mut probe = model.clone();
                nudge(&mut probe.net, c, d);
                classifier_loss(&probe, &x, &t).unwrap()
            });
            (param_grad(&grads, c), numeric)
        })
        .collect();
    fd_verdict(h, "classifier loss parameter gradients", &pairs);

    let (disc, real, fake) = loop {
        let disc = build_discriminator(&DiscriminatorConfig::default(), &mut rng).unwrap();
        let batch = |n: usize, rng: &mut SeededRng| {
            let mut d = Vec::new();
            for _ in 0..n {
                let side = rng.below(2);
                d.extend([rng.normal() * 3.0, rng.normal(), (side == 0) as u8 as f64, (side == 1) as u8 as f64]);
            }
            Tensor::new(vec![n, 4], d).unwrap()
        };
        let (real, fake) = (batch(6, &mut rng), batch(6, &mut rng));
        if !near_kink(&disc, &Tensor::concat_rows(&[&real, &fake]).unwrap()) {
            break (disc, real, fake);
        }
    };
    let (_, grads) = losses::discriminator_loss(&disc, &real, &fake).unwrap();
    let pairs: Vec<(f64, f64)> = parameter_coords(&disc, &mut rng)
        .into_iter()
        .map(|c| {
            let numeric = central_diff(|d| {
                let mut probe = disc.clone();
                nudge(&mut probe, c, d);
                losses::discriminator_loss(&probe, &real, &fake).unwrap().0
            });
            (param_grad(&grads, c), numeric)
        })
        .collect();
    fd_verdict(h, "rAAE discriminator loss gradients", &pairs);

    let ae_config = AutoencoderConfig { hidden: vec![32, 16], ..AutoencoderConfig::default() };
    let (encoder, images, sides) = (0..200)
        .find_map(|attempt| {
            let ae = build_autoencoder(&ae_config, &mut rng).unwrap();
            let images = mnist_rows(test_images, 1000 + attempt * 4, 4);
            let sides = vec![0, 1, 1, 0];
            let z = ae.encoder.forward(&images).unwrap();
            let cond: Vec<f64> = sides.iter().flat_map(|&s| [(s == 0) as u8 as f64, (s == 1) as u8 as f64]).collect();
            let zc: Vec<f64> = z.iter_rows().zip(cond.chunks(2)).flat_map(|(r, c)| r.iter().chain(c).copied().collect::<Vec<_>>()).collect();
            let zc = Tensor::new(vec![4, 4], zc).unwrap();
            (!near_kink(&ae.encoder, &images) && !near_kink(&disc, &zc)).then_some((ae.encoder, images, sides))
        })
        .expect("kink-free encoder fixture");
    let (_, grads) = losses::generator_loss(&disc, &encoder, &images, &sides).unwrap();
    let pairs: Vec<(f64, f64)> = parameter_coords(&encoder, &mut rng)
        .into_iter()
        .map(|c| {
            let numeric = central_diff(|d| {
                let mut probe = encoder.clone();
                nudge(&mut probe, c, d);
                losses::generator_loss(&disc, &probe, &images, &sides).unwrap().0
            });
            (param_grad(&grads, c), numeric)
        })
        .collect();
    fd_verdict(h, "rAAE encoder (generator) loss gradients", &pairs);

    let ae_config = AutoencoderConfig { hidden: vec![256, 64], ..AutoencoderConfig::default() };
    let (decoder, z) = loop {
        let ae = build_autoencoder(&ae_config, &mut rng).unwrap();
        let z = [rng.uniform_in(-3.0, 3.0), rng.uniform_in(-3.0, 3.0)];
        if !near_kink(&ae.decoder, &Tensor::new(vec![1, 2], z.to_vec()).unwrap()) {
            break (ae.decoder, z);
        }
    };
    let jac = decoder.jacobian(&z).unwrap();
    let pairs: Vec<(f64, f64)> = (0..FD_COORDS)
        .map(|_| {
            let (o, k) = (rng.below(784), rng.below(2));
            let numeric = central_diff(|d| {
                let mut p = z;
                p[k] += d;
                decoder.forward(&Tensor::new(vec![1, 2], p.to_vec()).unwrap()).unwrap().data()[o]
            });
            (jac.data()[o * 2 + k], numeric)
        })
        .collect();
    fd_verdict(h, "decoder Jacobian", &pairs);

    let (model, x) = classifier_fixture(test_images, 77);
    let labels: Vec<usize> = (0..x.rows()).map(|_| rng.below(10)).collect();
    let t = LabelSet::one_hot(&labels, 10).unwrap().probs;
    let (_, g) = model.net.input_gradient(&x, &t, LossKind::SoftCrossEntropy).unwrap();
    let pairs: Vec<(f64, f64)> = (0..FD_COORDS)
        .map(|_| {
            let i = rng.below(x.len());
            let numeric = central_diff(|d| {
                let mut probe = x.clone();
                probe.data_mut()[i] += d;
                classifier_loss(&model, &probe, &t).unwrap()
            });
            (g.data()[i], numeric)
        })
        .collect();
    fd_verdict(h, "FGSM input gradient", &pairs);
}

// 4 -------------------------------------------------------------------------

fn tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(root).unwrap().display().to_string(), std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn max_gap(sidecar: &SplitSidecar, probs: &Tensor) -> f64 {
    sidecar.row_pairs.iter().zip(probs.iter_rows()).map(|(&(a, b), r)| (r[a] - r[b]).abs()).fold(0.0, f64::max)
}

fn generation_config(out: &Path) -> BenchConfig {
    let mut c = common::desk_config(out);
    c.generation.pairs = vec![[3, 8]];
    c.generation.raae_seeds = (0..5).collect();
    c.generation.test_samples = 500;
    c.generation.train_samples = 500;
    c
}

/// Returns the first accepted (3, 8) rAAE's config for the sampler check.
fn generation(h: &mut Harness, log: &Logger) -> Option<BenchConfig> {
    let start = Instant::now();
    let a = generation_config(&scratch("generate-a"));
    let b = generation_config(&scratch("generate-b"));
    let summary = match generate::generate(&a, log) {
        Ok(s) => s,
        Err(e) => {
            h.error(4, "generation", e);
            return None;
        }
    };
    let p = &summary.pairs[0];
    let gates: Vec<String> =
        p.runs.iter().map(|r| format!("{:.3}/{:.3}", r.real_fake_accuracy, r.class_accuracy)).collect();
    h.check(
        4,
        "rAAE gate (real/fake in [0.4, 0.6], class > 0.9)",
        p.accepted >= 1,
        format!("{} of {} accepted, real-fake/class {}", p.accepted, p.trained, gates.join(" ")),
    );
    match data::load_split_dataset(&generate::generated_dir(&a), "test") {
        Ok((set, sidecar)) => {
            let gap = max_gap(&sidecar, &set.labels.probs);
            let rows = set.labels.probs.rows();
            h.check(4, "test samples within delta 0.25", rows == 500 && gap <= 0.25, format!("{rows} rows, max |p1 - p2| {gap:.4}"));
        }
        Err(e) => h.error(4, "test samples within delta 0.25", e),
    }
    let first = secs(start);
    if let Err(e) = generate::generate(&b, log) {
        h.error(4, "bit-identical rerun", e);
        return None;
    }
    let (ta, tb) = (tree(&a.output), tree(&b.output));
    let differing: Vec<&String> = ta.keys().filter(|k| tb.get(*k) != ta.get(*k)).collect();
    h.check(
        4,
        "bit-identical rerun",
        differing.is_empty() && ta.len() == tb.len(),
        format!("{} files compared, {} differ; first run {first}, both {}", ta.len(), differing.len(), secs(start)),
    );
    (p.accepted >= 1).then_some(a)
}

// 5 and 6 -------------------------------------------------------------------

fn desk_config() -> BenchConfig {
    let out = std::env::var_os("AMBIGUESS_DESK_OUT").map(PathBuf::from).unwrap_or_else(|| workspace().join("out/desk"));
    common::desk_config(&out)
}

fn in_band(v: f64, lo: f64, hi: f64) -> bool {
    (lo..=hi).contains(&v)
}

fn ambiguity(h: &mut Harness, config: &BenchConfig, inputs: &Inputs, log: &Logger) {
    let start = Instant::now();
    let report = match evaluate::evaluate_with(config, inputs, log) {
        Ok(r) => r,
        Err(e) => return h.error(5, "ambiguity evaluation", e),
    };
    let elapsed = secs(start);
    for arch in &config.classifier.architectures {
        let a = arch.name.as_str();
        let (Some(amb), Some(nom), Some(clean_nom)) = (
            report.row(a, TrainingSet::Mixed, "ambiguous"),
            report.row(a, TrainingSet::Mixed, "nominal"),
            report.row(a, TrainingSet::Clean, "nominal"),
        ) else {
            h.check(5, a, false, "missing rows");
            continue;
        };
        let n = amb.top1.n;
        h.check(5, &format!("{a} Top-1 on ambiguous in [0.35, 0.70]"), in_band(amb.top1.mean, 0.35, 0.70), format!("{:.4} (n={n})", amb.top1.mean));
        h.check(5, &format!("{a} Top-2 on ambiguous >= 0.85"), amb.top2.mean >= 0.85, format!("{:.4}", amb.top2.mean));
        let pair = amb.top_pair.as_ref().map_or(f64::NAN, |s| s.mean);
        h.check(5, &format!("{a} Top-Pair on ambiguous >= 0.75"), pair >= 0.75, format!("{pair:.4}"));
        let ratio = amb.entropy.mean / nom.entropy.mean;
        h.check(
            5,
            &format!("{a} entropy(ambiguous) >= 2 x entropy(nominal)"),
            ratio >= 2.0,
            format!("{:.4} vs {:.4}, ratio {ratio:.2}", amb.entropy.mean, nom.entropy.mean),
        );
        let drop = clean_nom.top1.mean - nom.top1.mean;
        h.check(
            5,
            &format!("{a} nominal accuracy drop <= 2pp"),
            drop <= 0.02,
            format!("clean {:.4} -> mixed {:.4} ({:+.2}pp)", clean_nom.top1.mean, nom.top1.mean, -100.0 * drop),
        );
    }
    println!("      [5] evaluation time {elapsed} (classifiers cached when present)");
}

fn supervisors(h: &mut Harness, config: &BenchConfig, inputs: &Inputs, log: &Logger) {
    use ambiguess_core::supervisors::Supervisor::{Autoencoder, Dsa, Lsa, Mdsa, SoftmaxEntropy};
    let start = Instant::now();
    let report: BenchReport = match bench::bench_with(config, inputs, log) {
        Ok(r) => r,
        Err(e) => return h.error(6, "supervisor bench", e),
    };
    let elapsed = secs(start);
    let auc = |s, f| report.overall.mean_auc(s, f).unwrap_or(f64::NAN);
    let amb = SourceTag::Ambiguous;
    let inv = SourceTag::Invalid;
    let checks = [
        ("softmax entropy AUC(ambiguous) >= 0.85", auc(SoftmaxEntropy, amb) >= 0.85, auc(SoftmaxEntropy, amb)),
        ("LSA AUC(ambiguous) <= 0.50", auc(Lsa, amb) <= 0.50, auc(Lsa, amb)),
        ("MDSA AUC(ambiguous) <= 0.55", auc(Mdsa, amb) <= 0.55, auc(Mdsa, amb)),
        ("autoencoder AUC(invalid) >= 0.90", auc(Autoencoder, inv) >= 0.90, auc(Autoencoder, inv)),
        ("DSA AUC(invalid) >= 0.85", auc(Dsa, inv) >= 0.85, auc(Dsa, inv)),
    ];
    for (name, ok, v) in checks {
        h.check(6, name, ok, format!("{v:.4} (n={})", report.overall.runs));
    }
    h.check(
        6,
        "entropy beats DSA on ambiguous",
        auc(SoftmaxEntropy, amb) > auc(Dsa, amb),
        format!("{:.4} vs {:.4}", auc(SoftmaxEntropy, amb), auc(Dsa, amb)),
    );
    h.check(
        6,
        "DSA beats entropy on invalid",
        auc(Dsa, inv) > auc(SoftmaxEntropy, inv),
        format!("{:.4} vs {:.4}", auc(Dsa, inv), auc(SoftmaxEntropy, inv)),
    );
    println!("      [6] bench time {elapsed} (models cached when present)");
}

// 7 -------------------------------------------------------------------------

fn property_suites(h: &mut Harness) {
    let cargo = std::env::var("CARGO").unwrap_or_else(|_| "cargo".into());
    let target = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance-suites");
    let runs: [(&str, &[&str]); 2] = [
        ("ambiguess-core property and unit suites", &["test", "-p", "ambiguess-core"]),
        (
            "companion unit and property suites",
            &[
                "test", "-p", "ambiguess", "--lib", "--test", "idx_roundtrip", "--test", "checkpoint_roundtrip", "--test",
                "config_validation", "--test", "report_props",
            ],
        ),
    ];
    for (name, args) in runs {
        let start = Instant::now();
        let out = Command::new(&cargo).args(args).arg("--target-dir").arg(&target).current_dir(workspace()).output();
        match out {
            Ok(o) => {
                let text = String::from_utf8_lossy(&o.stdout);
                let mut passed = 0;
                let mut failed = 0;
                for line in text.lines().filter(|l| l.starts_with("test result:")) {
                    let count = |key: &str| {
                        line.split(';').find_map(|p| p.trim().strip_suffix(key).and_then(|n| n.trim().rsplit(' ').next()?.parse::<usize>().ok()))
                    };
                    passed += count("passed").unwrap_or(0);
                    failed += count("failed").unwrap_or(0);
                }
                h.check(7, name, o.status.success() && failed == 0 && passed > 0, format!("{passed} passed, {failed} failed ({})", secs(start)));
            }
            Err(e) => h.check(7, name, false, format!("could not run cargo: {e}")),
        }
    }
}

fn idx_bit_exact(h: &mut Harness) {
    let mut mismatched = Vec::new();
    for file in ["t10k-images-idx3-ubyte", "t10k-labels-idx1-ubyte"] {
        let path = common::data_dir().join("mnist").join(file);
        let ok = std::fs::read(&path).ok().and_then(|bytes| idx::decode(&bytes).ok().map(|a| idx::encode(&a) == bytes));
        if ok != Some(true) {
            mismatched.push(file);
        }
    }
    let mut rng = SeededRng::new(7);
    let data: Vec<f32> = (0..4000).map(|_| f32::from_bits(rng.next_u64() as u32)).collect();
    let array = idx::IdxArray::F32 { shape: vec![400, 10], data: data.clone() };
    let back = idx::decode(&idx::encode(&array));
    let floats_ok = matches!(&back, Ok(idx::IdxArray::F32 { data: d, .. }) if d.iter().zip(&data).all(|(a, b)| a.to_bits() == b.to_bits()));
    h.check(
        7,
        "IDX round trips bit-exact",
        mismatched.is_empty() && floats_ok,
        format!("MNIST t10k images and labels re-encode byte-identically: {}; 4000 random f32 bit patterns: {floats_ok}", mismatched.is_empty()),
    );
}

fn information_inequalities(h: &mut Harness) {
    let mut rng = SeededRng::new(11);
    let (mut min_mi, mut min_gap) = (f64::INFINITY, f64::INFINITY);
    for _ in 0..10_000 {
        let t = 2 + rng.below(30);
        let c = 2 + rng.below(9);
        let sharp = if rng.uniform() < 0.5 { 30.0 } else { 2.0 };
        let mut data = Vec::with_capacity(t * c);
        for _ in 0..t {
            let logits: Vec<f64> = (0..c).map(|_| rng.normal() * sharp).collect();
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            data.extend(e.iter().map(|v| v / s));
        }
        let s = uncertainty_scores(&Tensor::new(vec![t, c], data).unwrap()).unwrap();
        min_mi = min_mi.min(s.mi);
        min_gap = min_gap.min(s.pe - s.mi);
    }
    h.check(
        7,
        "MI >= 0 and PE >= MI on 10^4 sample sets",
        min_mi >= -1e-12 && min_gap >= -1e-12,
        format!("min MI {min_mi:.2e}, min PE - MI {min_gap:.2e} (rounding floor -1e-12)"),
    );
}

fn sampler_frequencies(h: &mut Harness, generated: Option<&BenchConfig>) {
    let name = "sampler cell frequencies within 3 sigma";
    let Some(config) = generated else {
        return h.check(7, name, false, "no accepted rAAE from criterion 4");
    };
    let pair = ClassPair::new(3, 8, config.data.name.clone()).unwrap();
    let model = config.generation.raae_seeds.iter().find_map(|&s| {
        let (m, _) = checkpoint::load_raae(&generate::raae_path(config, &pair, s)).ok()?;
        m.is_accepted().then_some(m)
    });
    let Some(model) = model else {
        return h.check(7, name, false, "accepted checkpoint not found");
    };
    let plan = build_plan(&model, 40, 40, 0.25).unwrap();
    let picker = CellSampler::new(&plan.probabilities);
    let mut rng = SeededRng::new(100_000);
    let draws = 100_000;
    let mut counts = vec![0usize; plan.cells.len()];
    for _ in 0..draws {
        counts[picker.pick(&mut rng)] += 1;
    }
    let mut outside = 0;
    let mut worst = 0.0f64;
    let mut expected_outside = 0.0;
    let mut zero_weight_hits = 0;
    for (&k, &q) in counts.iter().zip(&plan.probabilities) {
        let sigma = (draws as f64 * q * (1.0 - q)).sqrt();
        let dev = (k as f64 - draws as f64 * q).abs();
        if q == 0.0 {
            zero_weight_hits += k;
            continue;
        }
        expected_outside += 0.0027;
        worst = worst.max(dev / sigma);
        outside += usize::from(dev > 3.0 * sigma);
    }
    let live = plan.probabilities.iter().filter(|q| **q > 0.0).count();
    let chance = 1.0 - 0.9973f64.powi(live as i32);
    h.known_conflict(
        7,
        name,
        outside == 0,
        format!(
            "{draws} draws over {live} weighted cells of 1600, {outside} outside 3 sigma, worst {worst:.2} sigma; \
             a correct sampler leaves about {expected_outside:.1} cells outside and fails this per-cell check with probability {chance:.2}"
        ),
    );

    // Pearson chi-square over the weighted cells, mapped to a standard
    // normal by the Wilson-Hilferty cube-root transform.
    let chi2: f64 = counts
        .iter()
        .zip(&plan.probabilities)
        .filter(|(_, q)| **q > 0.0)
        .map(|(&k, &q)| {
            let e = draws as f64 * q;
            (k as f64 - e).powi(2) / e
        })
        .sum();
    let dof = (live - 1) as f64;
    let z = ((chi2 / dof).cbrt() - (1.0 - 2.0 / (9.0 * dof))) / (2.0 / (9.0 * dof)).sqrt();
    h.check(
        7,
        "sampler cell frequencies fit the weights (chi-square at 3 sigma)",
        z <= 3.0 && zero_weight_hits == 0,
        format!("chi2 {chi2:.1} on {dof} dof, z {z:.2} <= 3; {zero_weight_hits} draws in zero-weight cells"),
    );
}

fn fgsm_collapse(h: &mut Harness, config: &BenchConfig, inputs: &Inputs) {
    let name = "FGSM eps 0.2 drops top-1 to <= 0.30";
    let arch = &config.classifier.architectures[0];
    let path = train::classifier_path(config, arch, TrainingSet::Clean, 0);
    let model = match checkpoint::load_classifier(&path) {
        Ok((m, _)) => m,
        Err(e) => return h.error(7, name, e.into()),
    };
    let test = &inputs.nominal.test;
    let n = 1000.min(test.len());
    let x = test.images.slice_rows(0, n);
    match fgsm_attack(&model, &x, &test.labels[..n], 0.2) {
        Ok(r) => {
            let acc = 1.0 - r.success_rate();
            h.check(7, name, acc <= 0.30, format!("{} clean #0 on {n} MNIST test images: {acc:.4}", arch.name));
        }
        Err(e) => h.error(7, name, e.into()),
    }
}

fn literal_invariants(h: &mut Harness) {
    let prior = LatentPrior::default();
    let disjoint = prior.modes_disjoint(1e-3).unwrap();
    let origin = prior.log_density(0, &[0.0, 0.0]).exp();
    h.known_conflict(
        7,
        "default prior modes disjoint at eps 1e-3",
        disjoint,
        format!("both densities at the origin are {origin:.2e} > 1e-3, so the regions meet; disjoint only above eps {origin:.3e}"),
    );

    let (d, n, classes) = (24, 200, 3);
    let mut rng = SeededRng::new(11);
    let centres: Vec<Vec<f64>> = (0..classes).map(|_| (0..d).map(|_| 4.0 * rng.normal()).collect()).collect();
    let scales: Vec<f64> = (0..d).map(|k| 0.5 + k as f64 / d as f64).collect();
    let mut draw = || {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..n {
                data.extend(centre.iter().zip(&scales).map(|(m, s)| m + s * rng.normal()));
                labels.push(c);
            }
        }
        (Tensor::new(vec![labels.len(), d], data).unwrap(), labels)
    };
    let (train, train_classes) = draw();
    let (test, test_classes) = draw();
    for (variant, label) in [(SurpriseVariant::Lsa, "LSA"), (SurpriseVariant::Dsa, "DSA"), (SurpriseVariant::Mdsa, "MDSA")] {
        let state = fit_surprise(&train, &train_classes, classes, variant, 5).unwrap();
        let mut nominal = surprise_scores(&state, &test, &test_classes).unwrap();
        nominal.sort_by(f64::total_cmp);
        let bound = nominal[(nominal.len() as f64 * 0.05).floor() as usize];
        let (dups, dup_classes) = match &state {
            SurpriseFitState::Dsa(pool) => (pool.points.clone(), pool.classes.clone()),
            _ => (train.clone(), train_classes.clone()),
        };
        let scores = surprise_scores(&state, &dups, &dup_classes).unwrap();
        let above = scores.iter().filter(|s| **s > bound).count();
        let detail = format!("{above} of {} training traces score above the nominal 5th percentile", scores.len());
        let name = format!("{label} near-duplicate suppression");
        if variant == SurpriseVariant::Mdsa {
            h.known_conflict(7, &name, above == 0, format!("{detail}; a Mahalanobis score has no per-sample memory"));
        } else {
            h.check(7, &name, above == 0, detail);
        }
    }
}

fn main() -> ExitCode {
    let log = Logger::new(std::env::var_os("AMBIGUESS_VERBOSE").is_none());
    let mut h = Harness { passed: 0, failed: 0, known: 0 };
    let start = Instant::now();

    appendix_example(&mut h);
    metric_oracles(&mut h);

    let desk = desk_config();
    let test_images = idx::load_images(&desk.data.nominal_dir.join("t10k-images-idx3-ubyte"))
        .expect("MNIST t10k images")
        .flatten_rows();
    let t = Instant::now();
    gradient_suite(&mut h, &test_images);
    println!("      [3] gradient suite time {}", secs(t));

    let generated = generation(&mut h, &log);

    let t = Instant::now();
    let inputs = generate::generate(&desk, &log).and_then(|_| Inputs::load(&desk, &log));
    println!("      [5] desk generation time {} (rAAEs cached when present)", secs(t));
    match &inputs {
        Ok(inputs) => {
            ambiguity(&mut h, &desk, inputs, &log);
            supervisors(&mut h, &desk, inputs, &log);
        }
        Err(e) => {
            h.check(5, "desk inputs", false, format!("error: {e:#}"));
            h.check(6, "desk inputs", false, "not run");
        }
    }

    property_suites(&mut h);
    idx_bit_exact(&mut h);
    information_inequalities(&mut h);
    sampler_frequencies(&mut h, generated.as_ref());
    match &inputs {
        Ok(inputs) => fgsm_collapse(&mut h, &desk, inputs),
        Err(_) => h.check(7, "FGSM eps 0.2 drops top-1 to <= 0.30", false, "desk inputs unavailable"),
    }
    literal_invariants(&mut h);

    println!(
        "acceptance: {} passed, {} failed, {} known conflicts ({})",
        h.passed,
        h.failed,
        h.known,
        secs(start)
    );
    if h.failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
