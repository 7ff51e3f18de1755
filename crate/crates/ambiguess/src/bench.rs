//! Scores every configured supervisor on nominal inputs and the four
//! high-uncertainty families, per architecture and repetition.

use std::collections::BTreeMap;
use std::path::PathBuf;

use ambiguess_core::datasets::{corrupt, fgsm_attack, make_invalid_set, pgd_attack, SourceTag};
use ambiguess_core::metrics::hard_labels;
use ambiguess_core::models::{AutoencoderModel, ClassifierModel};
use ambiguess_core::rng::derive_seed;
use ambiguess_core::supervisors::{
    autoencoder_score, deepgini, ensemble_scores, fit_dissector, fit_surprise, max_softmax, mc_scores, pcs,
    softmax_entropy, surprise_scores, Dissector, ScoreVector, Supervisor, SurpriseFitState, SurpriseVariant,
};
use ambiguess_core::tensor::argmax;
use ambiguess_core::{SeededRng, Tensor};
use anyhow::{Context, Result};
use rayon::prelude::*;

use crate::config::BenchConfig;
use crate::data::split_evenly;
use crate::log::Logger;
use crate::report::{self, BenchReport, NotAvailable, RunMeta, ScoreRun};
use crate::train::{self, Inputs, TrainingSet};

pub const ENSEMBLE_ADVERSARIAL_REASON: &str = "adversarial sets are not used with ensembles";

pub fn scores_dir(config: &BenchConfig) -> PathBuf {
    config.output.join("scores")
}

pub fn report_dir(config: &BenchConfig) -> PathBuf {
    config.output.join("report")
}

/// Model-independent test sets; the adversarial family is attacked per
/// model from `adversarial_source`.
pub struct TestSets {
    pub nominal: Tensor,
    pub ambiguous: Tensor,
    pub corrupted: Tensor,
    pub invalid: Tensor,
    pub adversarial_source: (Tensor, Vec<usize>),
}

/// Disjoint slices of the nominal test split feed the nominal, corrupted
/// and adversarial families, in that order.
pub fn build_test_sets(config: &BenchConfig, inputs: &Inputs) -> Result<TestSets> {
    let t = &config.test_sets;
    let test = &inputs.nominal.test;
    let nominal = test.range(0, t.nominal);
    let corr_src = test.range(t.nominal, t.nominal + t.corrupted);
    let adv_src = test.range(t.nominal + t.corrupted, t.nominal + t.corrupted + t.adversarial);
    let mut parts = Vec::new();
    let mut start = 0;
    for (kind, n) in t.corruptions.iter().zip(split_evenly(corr_src.len(), t.corruptions.len())) {
        let mut rng = SeededRng::new(derive_seed(config.seed, &format!("corrupt/{}", kind.as_str())));
        let set = corrupt(&corr_src.images.slice_rows(start, start + n), *kind, t.severity, &t.severity_table, &mut rng)?;
        parts.push(set.matrix());
        start += n;
    }
    let corrupted = if parts.is_empty() {
        Tensor::zeros(&[0, ambiguess_core::IMAGE_PIXELS])
    } else {
        Tensor::concat_rows(&parts.iter().collect::<Vec<_>>())?
    };
    let invalid = make_invalid_set(&inputs.foreign.test.range(0, t.invalid).images)?.matrix();
    Ok(TestSets {
        nominal: nominal.images,
        ambiguous: inputs.ambiguous_test.images.matrix(),
        corrupted,
        invalid,
        adversarial_source: (adv_src.images, adv_src.labels),
    })
}

/// First half FGSM, second half PGD, both against `model`.
fn adversarial_set(config: &BenchConfig, model: &ClassifierModel, sets: &TestSets) -> Result<(Tensor, f64)> {
    let a = &config.test_sets.attack;
    let (x, y) = &sets.adversarial_source;
    let half = x.rows() / 2;
    let fgsm = fgsm_attack(model, &x.slice_rows(0, half), &y[..half], a.epsilon)?;
    let pgd = pgd_attack(model, &x.slice_rows(half, x.rows()), &y[half..], a.epsilon, a.pgd_step, a.pgd_iterations)?;
    let success = fgsm.success.iter().chain(&pgd.success).filter(|s| **s).count() as f64 / x.rows().max(1) as f64;
    Ok((Tensor::concat_rows(&[&fgsm.images.matrix(), &pgd.images.matrix()])?, success))
}

/// Supervisor state fitted once per run.
struct Fitted {
    dissector: Result<Dissector, String>,
    surprise: BTreeMap<Supervisor, Result<SurpriseFitState, String>>,
}

fn fit(config: &BenchConfig, inputs: &Inputs, model: &ClassifierModel, supervisors: &[Supervisor], key: &str) -> Result<Fitted> {
    let rows = config.supervisors.surprise_fit_rows.min(inputs.mixed.0.rows());
    let x = inputs.mixed.0.slice_rows(0, rows);
    let y = inputs.mixed.1.slice_rows(0, rows);
    let dissector = if supervisors.contains(&Supervisor::Dissector) {
        fit_dissector(model, &x, &y, &config.supervisors.dissector, derive_seed(config.seed, &format!("dissector/{key}")))
            .map_err(|e| e.to_string())
    } else {
        Err("not configured".into())
    };
    let mut surprise = BTreeMap::new();
    let wanted: Vec<(Supervisor, SurpriseVariant)> = [
        (Supervisor::Dsa, SurpriseVariant::Dsa),
        (Supervisor::Lsa, SurpriseVariant::Lsa),
        (Supervisor::Mdsa, SurpriseVariant::Mdsa),
    ]
    .into_iter()
    .filter(|(s, _)| supervisors.contains(s))
    .collect();
    if !wanted.is_empty() {
        let (hidden, _) = model.trace(&x)?;
        let acts = hidden.last().expect("at least one hidden layer");
        let classes = hard_labels(&y);
        for (sup, variant) in wanted {
            let seed = derive_seed(config.seed, &format!("{}/{key}", sup.id()));
            surprise.insert(sup, fit_surprise(acts, &classes, crate::data::CLASSES, variant, seed).map_err(|e| e.to_string()));
        }
    }
    Ok(Fitted { dissector, surprise })
}

struct RunContext<'a> {
    config: &'a BenchConfig,
    model: &'a ClassifierModel,
    ensemble: &'a [ClassifierModel],
    autoencoder: Option<&'a AutoencoderModel>,
    fitted: &'a Fitted,
    key: String,
}

/// Scores of every supervisor for one family; errors become reasons.
fn score_family(
    ctx: &RunContext,
    supervisors: &[Supervisor],
    tag: SourceTag,
    images: &Tensor,
) -> Result<Vec<(Supervisor, Result<Vec<f64>, String>)>> {
    let (hidden, probs) = ctx.model.trace(images)?;
    let rows = || probs.iter_rows();
    let mut mc = None;
    let mut ens = None;
    let mut out = Vec::new();
    for &sup in supervisors {
        let scores: Result<Vec<f64>, String> = match sup {
            Supervisor::MaxSoftmax => Ok(rows().map(max_softmax).collect()),
            Supervisor::Pcs => Ok(rows().map(pcs).collect()),
            Supervisor::SoftmaxEntropy => Ok(rows().map(softmax_entropy).collect()),
            Supervisor::DeepGini => Ok(rows().map(deepgini).collect()),
            Supervisor::McDropoutVr | Supervisor::McDropoutMs | Supervisor::McDropoutMi | Supervisor::McDropoutPe => {
                let sets = mc.get_or_insert_with(|| {
                    let seed = derive_seed(ctx.config.seed, &format!("mc-dropout/{}/{}", ctx.key, tag.as_str()));
                    ctx.model
                        .mc_dropout_predict_batch(images, ctx.config.supervisors.mc_samples, seed)
                        .and_then(|s| s.iter().map(mc_scores).collect::<ambiguess_core::Result<Vec<_>>>())
                        .map_err(|e| e.to_string())
                });
                sets.as_ref().map_err(Clone::clone).map(|s| {
                    s.iter()
                        .map(|m| match sup {
                            Supervisor::McDropoutVr => m.vr,
                            Supervisor::McDropoutMs => m.ms,
                            Supervisor::McDropoutMi => m.mi,
                            _ => m.pe,
                        })
                        .collect()
                })
            }
            Supervisor::EnsembleMs | Supervisor::EnsembleMi | Supervisor::EnsemblePe => {
                if tag == SourceTag::Adversarial {
                    continue;
                }
                let sets = ens.get_or_insert_with(|| ensemble_scores(ctx.ensemble, images).map_err(|e| e.to_string()));
                sets.as_ref().map_err(Clone::clone).map(|s| {
                    s.iter()
                        .map(|e| match sup {
                            Supervisor::EnsembleMs => e.ms,
                            Supervisor::EnsembleMi => e.mi,
                            _ => e.pe,
                        })
                        .collect()
                })
            }
            Supervisor::Dissector => ctx
                .fitted
                .dissector
                .as_ref()
                .map_err(Clone::clone)
                .and_then(|d| d.scores(&hidden, &probs).map_err(|e| e.to_string())),
            Supervisor::Dsa | Supervisor::Lsa | Supervisor::Mdsa => {
                match ctx.fitted.surprise.get(&sup).expect("fitted when configured") {
                    Ok(state) => {
                        let predicted: Vec<usize> = rows().map(argmax).collect();
                        surprise_scores(state, hidden.last().expect("hidden layer"), &predicted).map_err(|e| e.to_string())
                    }
                    Err(e) => Err(e.clone()),
                }
            }
            Supervisor::Autoencoder => match ctx.autoencoder {
                Some(ae) => autoencoder_score(ae, images).map_err(|e| e.to_string()),
                None => Err("not configured".into()),
            },
        };
        let checked = scores.and_then(|s| ScoreVector::new(sup, s).map(|v| v.scores).map_err(|e| e.to_string()));
        out.push((sup, checked));
    }
    Ok(out)
}

fn run_unit(config: &BenchConfig, inputs: &Inputs, sets: &TestSets, arch: usize, rep: usize, pool: &[ClassifierModel], autoencoder: Option<&AutoencoderModel>, log: &Logger) -> Result<ScoreRun> {
    let supervisors = config.supervisors();
    let name = &config.classifier.architectures[arch].name;
    let key = format!("{name}/{rep}");
    let model = &pool[rep];
    let e = config.supervisors.ensemble_size;
    let ensemble = &pool[rep..(rep + e).min(pool.len())];
    let fitted = fit(config, inputs, model, &supervisors, &key)?;
    let ctx = RunContext {
        config,
        model,
        ensemble,
        autoencoder,
        fitted: &fitted,
        key: key.clone(),
    };
    let (adversarial, success) = adversarial_set(config, model, sets)?;
    log.info(format_args!("{key}: attack success rate {success:.3}"));
    let families = [
        (SourceTag::Nominal, &sets.nominal),
        (SourceTag::Ambiguous, &sets.ambiguous),
        (SourceTag::Adversarial, &adversarial),
        (SourceTag::Corrupted, &sets.corrupted),
        (SourceTag::Invalid, &sets.invalid),
    ];
    let mut run = ScoreRun {
        meta: RunMeta {
            config_digest: inputs.digest.clone(),
            architecture: name.clone(),
            repetition: rep,
            not_available: Vec::new(),
        },
        scores: BTreeMap::new(),
    };
    for sup in supervisors.iter().filter(|s| s.is_ensemble()) {
        run.meta.not_available.push(NotAvailable {
            supervisor: sup.id().into(),
            test_set: SourceTag::Adversarial.as_str().into(),
            reason: ENSEMBLE_ADVERSARIAL_REASON.into(),
        });
    }
    for (tag, images) in families {
        for (sup, scores) in score_family(&ctx, &supervisors, tag, images)? {
            match scores {
                Ok(s) => {
                    run.scores.insert((sup, tag), s);
                }
                Err(reason) => {
                    log.warn(format_args!("{key}: {} on {} not available: {reason}", sup.id(), tag.as_str()));
                    run.meta.not_available.push(NotAvailable {
                        supervisor: sup.id().into(),
                        test_set: tag.as_str().into(),
                        reason,
                    });
                }
            }
        }
    }
    log.info(format_args!("{key}: scored"));
    Ok(run)
}

/// Runs the full bench and writes score files plus the report built from
/// them.
pub fn bench_supervisors(config: &BenchConfig, log: &Logger) -> Result<BenchReport> {
    let inputs = Inputs::load(config, log)?;
    bench_with(config, &inputs, log)
}

pub fn bench_with(config: &BenchConfig, inputs: &Inputs, log: &Logger) -> Result<BenchReport> {
    let c = &config.classifier;
    let supervisors = config.supervisors();
    let wants_ensemble = supervisors.iter().any(|s| s.is_ensemble());
    let pool_size = c.repetitions + if wants_ensemble { config.supervisors.ensemble_size - 1 } else { 0 };
    let sets = build_test_sets(config, inputs)?;

    // Models first, so parallel units never train the same checkpoint.
    let jobs: Vec<(usize, usize)> = (0..c.architectures.len()).flat_map(|a| (0..pool_size).map(move |i| (a, i))).collect();
    let models: Vec<ClassifierModel> = jobs
        .par_iter()
        .map(|&(a, i)| train::classifier(config, inputs, &c.architectures[a], TrainingSet::Mixed, i, log))
        .collect::<Result<_>>()?;
    let autoencoders: Vec<AutoencoderModel> = if supervisors.contains(&Supervisor::Autoencoder) {
        (0..c.repetitions).into_par_iter().map(|r| train::autoencoder(config, inputs, r, log)).collect::<Result<_>>()?
    } else {
        Vec::new()
    };

    let units: Vec<(usize, usize)> = (0..c.architectures.len()).flat_map(|a| (0..c.repetitions).map(move |r| (a, r))).collect();
    let dir = scores_dir(config);
    let runs: Vec<ScoreRun> = units
        .par_iter()
        .map(|&(a, r)| {
            let pool = &models[a * pool_size..(a + 1) * pool_size];
            let run = run_unit(config, inputs, &sets, a, r, pool, autoencoders.get(r), log)?;
            report::write_run(&dir, &run).with_context(|| format!("writing scores for {}", run.meta.architecture))?;
            Ok(run)
        })
        .collect::<Result<_>>()?;
    let report = report::build_report(&runs, false)?;
    let out = report_dir(config);
    report::write_report(&out, &report)?;
    log.info(format_args!("wrote {}", out.display()));
    Ok(report)
}
