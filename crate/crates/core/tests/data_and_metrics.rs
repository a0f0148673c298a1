use imma::concepts::{generate, held_out_specs, pretraining_specs, Point, DEFAULT_REFERENCE};
use imma::diffusion::{q_sample, NoiseSchedule};
use imma::metrics::{concept_accuracy, energy_distance, rsgr, sgr, similarity, ClassifierConfig, EvalClassifier, SimilarityMetric};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn points(max: usize) -> impl Strategy<Value = Vec<Point>> {
    prop::collection::vec(prop::array::uniform2(-3.0f32..3.0), 1..max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn splits_never_share_a_point(k in 0usize..13, seed in any::<u64>(), n in 16usize..256) {
        let spec = pretraining_specs().into_iter().chain(held_out_specs()).nth(k).unwrap();
        let ds = generate(&spec, n, 64, seed).unwrap();
        for r in &ds.reference {
            prop_assert!(!ds.train.contains(r));
        }
    }

    #[test]
    fn energy_distance_is_symmetric_and_non_negative(x in points(40), y in points(40)) {
        let xy = energy_distance(&x, &y).unwrap();
        prop_assert_eq!(xy.to_bits(), energy_distance(&y, &x).unwrap().to_bits());
        prop_assert!(xy >= -1e-9);
    }

    #[test]
    fn gap_ratios_ignore_metric_scale(a in 0.01f64..1.0, b in 0.0f64..1.0, k in 0.01f64..100.0) {
        let s = sgr(a, b).unwrap();
        prop_assert!((sgr(k * a, k * b).unwrap() - s).abs() <= 1e-12 * s.abs().max(1.0));
        prop_assert!(sgr(k * a, k * b).unwrap().signum() == s.signum() || s == 0.0);
        prop_assert_eq!(sgr(a, b).unwrap().to_bits(), s.to_bits());
        let r = rsgr(a, b).unwrap();
        prop_assert!((rsgr(k * a, k * b).unwrap() - r).abs() <= 1e-12 * r.abs().max(1.0));
        prop_assert_eq!(rsgr(a, b).unwrap().to_bits(), r.to_bits());
    }

    #[test]
    fn similarity_is_in_unit_interval(x in points(30), y in points(30)) {
        for m in SimilarityMetric::ALL {
            let s = similarity(&x, &y, m).unwrap();
            prop_assert!(s > 0.0 && s <= 1.0, "{}: {s}", m.name());
            prop_assert_eq!(similarity(&x, &x, m).unwrap(), 1.0);
        }
    }
}

#[test]
fn forward_process_variance_matches_the_schedule() {
    let sched = NoiseSchedule::default();
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x0 = vec![[0.7f32, -1.2]; n];
    for t in [1, 10, 50, 100] {
        let eps: Vec<Point> = (0..n).map(|_| [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)]).collect();
        let xt = q_sample(&x0, &vec![t; n], &eps, &sched).unwrap();
        let want = 1.0 - sched.alpha_bar_at(t) as f64;
        for d in 0..2 {
            let mean = xt.iter().map(|p| p[d] as f64).sum::<f64>() / n as f64;
            let var = xt.iter().map(|p| (p[d] as f64 - mean).powi(2)).sum::<f64>() / n as f64;
            assert!((var / want - 1.0).abs() <= 0.02, "t={t} dim {d}: {var} vs {want}");
        }
    }
}

#[test]
fn classifier_separates_pretraining_concepts_on_unseen_points() {
    let data: Vec<_> = pretraining_specs().iter().map(|s| generate(s, 512, DEFAULT_REFERENCE, 0).unwrap()).collect();
    let clf = EvalClassifier::train(&data, &ClassifierConfig::default()).unwrap();
    let total: f64 = data.iter().map(|d| concept_accuracy(&d.train, &clf, d.spec.concept_id).unwrap()).sum();
    let acc = total / data.len() as f64;
    assert!(acc >= 0.95, "held-out accuracy {acc}");
}
