use ambiguess_core::supervisors::{
    deepgini, fit_surprise, max_softmax, pcs, softmax_entropy, surprise_scores, uncertainty_scores, SurpriseFitState,
    SurpriseVariant,
};
use ambiguess_core::{SeededRng, Tensor};
use proptest::prelude::*;

fn prob_row() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, 2..12).prop_map(|raw| {
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    })
}

fn family(p: &[f64]) -> [f64; 4] {
    [max_softmax(p), pcs(p), softmax_entropy(p), deepgini(p)]
}

proptest! {
    #[test]
    fn concentrating_mass_never_raises_softmax_scores(p in prob_row(), alpha in 0.0f64..1.0) {
        let top = ambiguess_core::tensor::argmax(&p);
        let mut q = p.clone();
        let mut moved = 0.0;
        for (j, v) in q.iter_mut().enumerate() {
            if j != top {
                moved += alpha * *v;
                *v -= alpha * *v;
            }
        }
        q[top] += moved;
        for (before, after) in family(&p).iter().zip(family(&q)) {
            prop_assert!(after <= before + 1e-12, "{after} > {before}");
        }
    }

    #[test]
    fn softmax_scores_ignore_class_order(p in prob_row(), seed in any::<u64>()) {
        let perm = SeededRng::new(seed).permutation(p.len());
        let q: Vec<f64> = perm.iter().map(|&i| p[i]).collect();
        for (a, b) in family(&p).iter().zip(family(&q)) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn softmax_scores_are_deterministic(p in prob_row()) {
        let a = family(&p).map(f64::to_bits);
        let b = family(&p).map(f64::to_bits);
        prop_assert_eq!(a, b);
    }
}

/// Random `[T × C]` softmax rows, some nearly one-hot.
fn sample_set(rng: &mut SeededRng) -> Tensor {
    let t = 2 + rng.below(40);
    let c = 2 + rng.below(9);
    let sharp = rng.uniform() < 0.3;
    let mut data = Vec::with_capacity(t * c);
    for _ in 0..t {
        let logits: Vec<f64> = (0..c).map(|_| rng.normal() * if sharp { 30.0 } else { 2.0 }).collect();
        let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        data.extend(e.iter().map(|v| v / s));
    }
    Tensor::new(vec![t, c], data).unwrap()
}

#[test]
fn information_inequalities_hold_on_random_sample_sets() {
    let mut rng = SeededRng::new(2024);
    for i in 0..10_000 {
        let set = sample_set(&mut rng);
        let s = uncertainty_scores(&set).unwrap();
        assert!(s.mi >= -1e-9, "set {i}: MI {}", s.mi);
        assert!(s.pe >= s.mi - 1e-9, "set {i}: PE {} < MI {}", s.pe, s.mi);
        assert!((0.0..1.0).contains(&s.vr));
    }
}

#[test]
fn variation_ratio_ties_resolve_to_lower_class() {
    let rows = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
    let s = uncertainty_scores(&rows).unwrap();
    assert_eq!(s.vr, 0.5);
    assert!((s.ms - 0.45).abs() < 1e-12);
}

struct Fixture {
    train: Tensor,
    train_classes: Vec<usize>,
    test: Tensor,
    test_classes: Vec<usize>,
}

/// Three Gaussian classes in 24 dimensions with anisotropic spread.
fn fixture() -> Fixture {
    let (d, n, classes) = (24, 200, 3);
    let mut rng = SeededRng::new(11);
    let centres: Vec<Vec<f64>> = (0..classes).map(|_| (0..d).map(|_| 4.0 * rng.normal()).collect()).collect();
    let scales: Vec<f64> = (0..d).map(|k| 0.5 + k as f64 / d as f64).collect();
    let mut draw = |count: usize| {
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for (c, centre) in centres.iter().enumerate() {
            for _ in 0..count {
                data.extend(centre.iter().zip(&scales).map(|(m, s)| m + s * rng.normal()));
                labels.push(c);
            }
        }
        (Tensor::new(vec![labels.len(), d], data).unwrap(), labels)
    };
    let (train, train_classes) = draw(n);
    let (test, test_classes) = draw(n);
    Fixture {
        train,
        train_classes,
        test,
        test_classes,
    }
}

fn fifth_percentile(scores: &[f64]) -> f64 {
    let mut s = scores.to_vec();
    s.sort_by(f64::total_cmp);
    s[(s.len() as f64 * 0.05).floor() as usize]
}

fn duplicate_check(variant: SurpriseVariant) -> (usize, usize) {
    let f = fixture();
    let state = fit_surprise(&f.train, &f.train_classes, 3, variant, 5).unwrap();
    let nominal = surprise_scores(&state, &f.test, &f.test_classes).unwrap();
    let bound = fifth_percentile(&nominal);
    let (dups, classes) = match &state {
        SurpriseFitState::Dsa(pool) => (pool.points.clone(), pool.classes.clone()),
        _ => (f.train.clone(), f.train_classes.clone()),
    };
    let scores = surprise_scores(&state, &dups, &classes).unwrap();
    (scores.iter().filter(|s| **s > bound).count(), scores.len())
}

#[test]
fn lsa_suppresses_training_duplicates() {
    let (above, total) = duplicate_check(SurpriseVariant::Lsa);
    assert_eq!(above, 0, "{above} of {total} training traces above the nominal 5th percentile");
}

#[test]
fn dsa_suppresses_training_duplicates() {
    let (above, total) = duplicate_check(SurpriseVariant::Dsa);
    assert_eq!(above, 0, "{above} of {total} pool traces above the nominal 5th percentile");
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<f64>, mut b: Vec<f64>, d: usize) -> Vec<f64> {
    for col in 0..d {
        let piv = (col..d).max_by(|&i, &j| a[i * d + col].abs().total_cmp(&a[j * d + col].abs())).unwrap();
        for k in 0..d {
            a.swap(col * d + k, piv * d + k);
        }
        b.swap(col, piv);
        for r in col + 1..d {
            let f = a[r * d + col] / a[col * d + col];
            for k in col..d {
                a[r * d + k] -= f * a[col * d + k];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = vec![0.0; d];
    for r in (0..d).rev() {
        let s: f64 = (r + 1..d).map(|k| a[r * d + k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r * d + r];
    }
    x
}

/// MDSA keeps no per-sample memory: a training trace scores exactly its
/// Mahalanobis distance under the ridged class covariance.
#[test]
fn mdsa_matches_mahalanobis_oracle_on_training_traces() {
    let f = fixture();
    let state = fit_surprise(&f.train, &f.train_classes, 3, SurpriseVariant::Mdsa, 0).unwrap();
    let scores = surprise_scores(&state, &f.train, &f.train_classes).unwrap();
    let d = f.train.row_len();
    for c in 0..3 {
        let rows: Vec<&[f64]> = f.train.iter_rows().zip(&f.train_classes).filter(|(_, k)| **k == c).map(|(r, _)| r).collect();
        let n = rows.len() as f64;
        let mean: Vec<f64> = (0..d).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
        let mut cov = vec![0.0; d * d];
        for r in &rows {
            for a in 0..d {
                for b in 0..d {
                    cov[a * d + b] += (r[a] - mean[a]) * (r[b] - mean[b]) / (n - 1.0);
                }
            }
        }
        let ridge = 1e-6 * (0..d).map(|k| cov[k * d + k]).sum::<f64>() / d as f64;
        for k in 0..d {
            cov[k * d + k] += ridge;
        }
        for (i, (r, _)) in f.train.iter_rows().zip(&f.train_classes).enumerate().filter(|(_, (_, k))| **k == c) {
            let v: Vec<f64> = r.iter().zip(&mean).map(|(x, m)| x - m).collect();
            let w = solve(cov.clone(), v.clone(), d);
            let want = v.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>().sqrt();
            assert!((scores[i] - want).abs() <= 1e-8 * want.max(1.0), "trace {i}: {} vs {want}", scores[i]);
        }
    }
}

#[test]
fn surprise_scores_are_deterministic() {
    let f = fixture();
    for variant in [SurpriseVariant::Lsa, SurpriseVariant::Mdsa, SurpriseVariant::Dsa] {
        let a = fit_surprise(&f.train, &f.train_classes, 3, variant, 9).unwrap();
        let b = fit_surprise(&f.train, &f.train_classes, 3, variant, 9).unwrap();
        assert_eq!(a, b);
        let sa = surprise_scores(&a, &f.test, &f.test_classes).unwrap();
        let sb = surprise_scores(&b, &f.test, &f.test_classes).unwrap();
        assert_eq!(sa.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), sb.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
