use proptest::prelude::*;
use tabtok::discretize::{bucket_regression_targets, fit_bins, BinConfig, BinError};

fn data() -> impl Strategy<Value = (Vec<f64>, Vec<usize>)> {
    (1usize..120).prop_flat_map(|n| (proptest::collection::vec(-50i32..50, n), proptest::collection::vec(0usize..3, n)))
        .prop_map(|(v, l)| (v.into_iter().map(|x| f64::from(x) * 0.25).collect(), l))
}

proptest! {
    #[test]
    fn edges_ascending_and_within_budget((values, labels) in data(), n_bin in 2usize..40, min_leaf in 1usize..10) {
        let cfg = BinConfig { n_bin, min_leaf_size: min_leaf, regression_target_bins: 2 };
        let b = fit_bins(&values, &labels, &cfg).unwrap();
        prop_assert!(b.n_bins() <= n_bin);
        prop_assert!(b.edges.windows(2).all(|w| w[0] < w[1]));
        for &e in &b.edges {
            prop_assert!(e > b.min && e <= b.max);
        }
    }

    #[test]
    fn every_leaf_respects_min_leaf((values, labels) in data(), min_leaf in 1usize..10) {
        let cfg = BinConfig { n_bin: 16, min_leaf_size: min_leaf, regression_target_bins: 2 };
        let b = fit_bins(&values, &labels, &cfg).unwrap();
        let mut counts = vec![0usize; b.n_bins()];
        for &x in &values {
            counts[b.bin_index(x)] += 1;
        }
        if b.n_bins() > 1 {
            prop_assert!(counts.iter().all(|&c| c >= min_leaf), "{counts:?}");
        }
    }

    #[test]
    fn bin_index_monotone_and_multiplier_bounded((values, labels) in data(), a in -100.0f64..100.0, b2 in -100.0f64..100.0) {
        let b = fit_bins(&values, &labels, &BinConfig { n_bin: 8, min_leaf_size: 1, regression_target_bins: 2 }).unwrap();
        let (lo, hi) = if a <= b2 { (a, b2) } else { (b2, a) };
        prop_assert!(b.bin_index(lo) <= b.bin_index(hi));
        prop_assert!(b.value_multiplier(lo) <= b.value_multiplier(hi));
        for x in [lo, hi] {
            let m = b.value_multiplier(x);
            prop_assert!((0.5..=1.5).contains(&m));
            prop_assert!(b.bin_index(x) < b.n_bins());
        }
    }

    #[test]
    fn single_class_gives_one_bin(values in proptest::collection::vec(-100.0f64..100.0, 1..80)) {
        let labels = vec![1; values.len()];
        let b = fit_bins(&values, &labels, &BinConfig { n_bin: 32, min_leaf_size: 1, regression_target_bins: 2 }).unwrap();
        prop_assert!(b.edges.is_empty());
    }

    #[test]
    fn regression_buckets_are_balanced(targets in proptest::collection::vec(-1e3f64..1e3, 2..200)) {
        let classes = bucket_regression_targets(&targets, 2);
        prop_assert!(classes.iter().all(|&c| c < 2));
        let hi = classes.iter().filter(|&&c| c == 1).count();
        // ties at the median can only move rows into the upper class
        prop_assert!(hi >= targets.len() / 2 || targets.iter().all(|&t| t == targets[0]));
    }
}

#[test]
fn clean_threshold_recovered() {
    let values: Vec<f64> = (0..20).map(f64::from).collect();
    let labels: Vec<usize> = (0..20).map(|i| usize::from(i >= 12)).collect();
    let b = fit_bins(&values, &labels, &BinConfig { n_bin: 2, min_leaf_size: 1, regression_target_bins: 2 }).unwrap();
    assert_eq!(b.edges, vec![11.5]);
    assert_eq!(b.bin_index(11.5), 1);
    assert_eq!(b.bin_index(11.4), 0);
}

#[test]
fn constant_feature_multiplier_is_one() {
    let b = fit_bins(&[3.0; 10], &[0, 1, 0, 1, 0, 1, 0, 1, 0, 1], &BinConfig::default()).unwrap();
    assert_eq!(b.n_bins(), 1);
    assert_eq!(b.value_multiplier(3.0), 1.0);
    assert_eq!(b.value_multiplier(-8.0), 1.0);
}

#[test]
fn errors() {
    let cfg = BinConfig::default();
    assert_eq!(fit_bins(&[], &[], &cfg), Err(BinError::EmptyInput));
    assert_eq!(fit_bins(&[f64::NAN], &[0], &cfg), Err(BinError::EmptyInput));
    assert!(matches!(fit_bins(&[1.0], &[0, 1], &cfg), Err(BinError::LengthMismatch { .. })));
    assert!(matches!(fit_bins(&[1.0], &[0], &BinConfig { n_bin: 1, ..cfg }), Err(BinError::InvalidConfig(_))));
    assert!(matches!(fit_bins(&[1.0], &[0], &BinConfig { min_leaf_size: 0, ..cfg }), Err(BinError::InvalidConfig(_))));
}
