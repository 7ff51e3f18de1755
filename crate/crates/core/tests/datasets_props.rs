use ambiguess_core::datasets::{
    assemble_mixed_training, corrupt, fgsm_attack, make_invalid_set, pgd_attack, CorruptionKind, ImageSet, LabelSet,
    ProbabilisticDataset, Provenance, SeverityTable, SourceTag,
};
use ambiguess_core::models::{build_classifier, ClassifierConfig};
use ambiguess_core::raae::{ClassPair, ProbabilisticLabel};
use ambiguess_core::{SeededRng, Tensor, IMAGE_PIXELS, IMAGE_SIDE};
use proptest::prelude::*;

fn images(n: usize, seed: u64) -> Tensor {
    let mut rng = SeededRng::new(seed);
    let data = (0..n * IMAGE_PIXELS).map(|_| if rng.uniform() < 0.7 { 0.0 } else { rng.uniform() }).collect();
    Tensor::new(vec![n, IMAGE_SIDE, IMAGE_SIDE], data).unwrap()
}

fn in_unit_range(set: &ImageSet) -> bool {
    set.images.data().iter().all(|v| (0.0..=1.0).contains(v))
}

fn kind() -> impl Strategy<Value = CorruptionKind> {
    prop::sample::select(CorruptionKind::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn corruptions_are_bounded_and_seeded(kind in kind(), severity in 1usize..=5, seed in any::<u64>()) {
        let x = images(3, seed);
        let table = SeverityTable::default();
        let a = corrupt(&x, kind, severity, &table, &mut SeededRng::new(seed)).unwrap();
        let b = corrupt(&x, kind, severity, &table, &mut SeededRng::new(seed)).unwrap();
        prop_assert!(in_unit_range(&a));
        prop_assert_eq!(a.tag, SourceTag::Corrupted);
        prop_assert_eq!(a, b);
    }

    #[test]
    fn attacks_stay_in_the_epsilon_ball(seed in any::<u64>(), eps in 0.0f64..0.3) {
        let mut rng = SeededRng::new(seed);
        let model = build_classifier(&ClassifierConfig { hidden: vec![16], ..ClassifierConfig::default() }, &mut rng).unwrap();
        let x = images(4, seed);
        let labels: Vec<usize> = (0..4).map(|_| rng.below(10)).collect();
        let fgsm = fgsm_attack(&model, &x, &labels, eps).unwrap();
        let pgd = pgd_attack(&model, &x, &labels, eps, eps / 5.0, 7).unwrap();
        for set in [&fgsm.images, &pgd.images] {
            prop_assert!(in_unit_range(set));
            prop_assert_eq!(set.tag, SourceTag::Adversarial);
            for (a, b) in set.images.data().iter().zip(x.data()) {
                prop_assert!((a - b).abs() <= eps + 1e-12);
            }
        }
        if eps == 0.0 {
            prop_assert_eq!(fgsm.images.images, x);
        }
    }

    #[test]
    fn mixed_assembly_is_seed_deterministic(seed in any::<u64>(), n in 0usize..6, m in 0usize..6) {
        let pair = ClassPair::new(1, 7, "mnist").unwrap();
        let mut rng = SeededRng::new(seed);
        let probs: Vec<f64> = (0..m)
            .flat_map(|_| ProbabilisticLabel::from_supports(&pair, rng.uniform() + 0.01, rng.uniform() + 0.01).unwrap().embed(10))
            .collect();
        let amb = ProbabilisticDataset::new(
            ImageSet::new(images(m, seed ^ 1), SourceTag::Ambiguous).unwrap(),
            LabelSet::new(Tensor::new(vec![m, 10], probs).unwrap(), Some(vec![(1, 7); m])).unwrap(),
            Provenance::default(),
        )
        .unwrap();
        let nominal = images(n, seed ^ 2);
        let labels: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let a = assemble_mixed_training(&nominal, &labels, 10, &amb, &mut SeededRng::new(seed)).unwrap();
        let b = assemble_mixed_training(&nominal, &labels, 10, &amb, &mut SeededRng::new(seed)).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert_eq!(a.len(), n + m);
        let two = a.labels.probs.iter_rows().filter(|r| r.iter().filter(|v| **v > 0.0).count() == 2).count();
        prop_assert_eq!(two, m);
    }
}

#[test]
fn invalid_sets_pass_pixels_through() {
    let x = images(5, 3);
    let set = make_invalid_set(&x).unwrap();
    assert_eq!(set.images, x);
    assert_eq!(set.tag, SourceTag::Invalid);
    assert!(make_invalid_set(&Tensor::zeros(&[0, IMAGE_SIDE, IMAGE_SIDE])).unwrap().is_empty());
}

#[test]
fn out_of_range_pixels_are_rejected() {
    let bad = Tensor::filled(&[1, IMAGE_SIDE, IMAGE_SIDE], 1.5);
    assert!(ImageSet::new(bad, SourceTag::Nominal).is_err());
}
