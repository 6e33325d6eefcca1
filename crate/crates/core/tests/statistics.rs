use bridgelab::mc::{wasserstein_1d, Engine, RngStream, SampleStats};
use proptest::prelude::*;
use rand::Rng;

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-50.0f64..50.0, 1..40)
}

proptest! {
    #[test]
    fn merge_matches_concatenation(a in sample(), b in sample(), c in sample()) {
        let (sa, sb, sc) = (SampleStats::from_slice(&a), SampleStats::from_slice(&b), SampleStats::from_slice(&c));
        let left = sa.merge(&sb).merge(&sc);
        let right = sa.merge(&sb.merge(&sc));
        let all: Vec<f64> = a.iter().chain(&b).chain(&c).copied().collect();
        let flat = SampleStats::from_slice(&all);
        prop_assert_eq!(left.n(), flat.n());
        prop_assert!((left.mean() - right.mean()).abs() < 1e-9);
        prop_assert!((left.mean() - flat.mean()).abs() < 1e-9);
        if flat.n() > 1 {
            prop_assert!((left.variance() - flat.variance()).abs() < 1e-7 * (1.0 + flat.variance()));
            prop_assert!((right.variance() - flat.variance()).abs() < 1e-7 * (1.0 + flat.variance()));
        }
    }

    #[test]
    fn wasserstein_is_a_metric(a in sample(), b in sample(), c in sample()) {
        let ab = wasserstein_1d(&a, &b, 1.0).unwrap();
        let bc = wasserstein_1d(&b, &c, 1.0).unwrap();
        let ac = wasserstein_1d(&a, &c, 1.0).unwrap();
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert!((ab - wasserstein_1d(&b, &a, 1.0).unwrap()).abs() < 1e-9);
        prop_assert!(wasserstein_1d(&a, &a, 1.0).unwrap() < 1e-12);
    }

    #[test]
    fn wasserstein_affine_equivariance(a in sample(), b in sample(), s in 0.1f64..5.0, shift in -10.0f64..10.0) {
        let w = wasserstein_1d(&a, &b, 1.0).unwrap();
        let map = |xs: &[f64]| xs.iter().map(|x| s * x + shift).collect::<Vec<_>>();
        let ws = wasserstein_1d(&map(&a), &map(&b), 1.0).unwrap();
        prop_assert!((ws - s * w).abs() < 1e-8 * (1.0 + s * w));
    }

    #[test]
    fn translation_moves_w1_by_the_shift(a in sample(), shift in -10.0f64..10.0) {
        let moved: Vec<f64> = a.iter().map(|x| x + shift).collect();
        prop_assert!((wasserstein_1d(&a, &moved, 1.0).unwrap() - shift.abs()).abs() < 1e-9);
    }
}

#[test]
fn aggregate_bits_ignore_worker_count() {
    let task = |s: RngStream| -> bridgelab::Result<f64> {
        let mut r = s.rng();
        Ok((0..10).map(|_| r.random::<f64>()).sum())
    };
    let one = Engine::new(1).unwrap().run_batches(5000, 3, task).unwrap();
    for w in [2, 5, 8] {
        let many = Engine::new(w).unwrap().run_batches(5000, 3, task).unwrap();
        assert_eq!(one.mean().to_bits(), many.mean().to_bits());
        assert_eq!(one.variance().to_bits(), many.variance().to_bits());
    }
}
