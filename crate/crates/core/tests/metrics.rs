use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tabtok::metrics::{
    auc, bucket_deltas, delta_buckets, geometry_from_features, report_delta, rmse, spearman, DeltaBucket, MetricError, MetricName,
    MetricReport,
};
use tabtok::table::Task;
use tabtok::tensor::Matrix;

fn two_class() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (2usize..60)
        .prop_flat_map(|n| (proptest::collection::vec(-5i32..5, n), proptest::collection::vec(any::<bool>(), n)))
        .prop_filter("both classes", |(_, l)| l.iter().any(|&b| b) && l.iter().any(|&b| !b))
        .prop_map(|(s, l)| (s.into_iter().map(f64::from).collect(), l.into_iter().map(|b| f64::from(u8::from(b))).collect()))
}

fn report(dataset: &str, metric: MetricName, value: f64) -> MetricReport {
    let task = if metric == MetricName::Auc { Task::Binclass } else { Task::Regression };
    MetricReport { dataset: dataset.into(), task, metric, value, split_sizes: [64, 16, 20], seed: 0, arm: "x".into() }
}

proptest! {
    #[test]
    fn auc_invariant_under_monotone_transform((s, l) in two_class()) {
        let t: Vec<f64> = s.iter().map(|x| (x * 0.7).exp() + 3.0).collect();
        prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
    }

    #[test]
    fn auc_of_negated_scores_complements((s, l) in two_class()) {
        let neg: Vec<f64> = s.iter().map(|x| -x).collect();
        let sum = auc(&s, &l).unwrap() + auc(&neg, &l).unwrap();
        prop_assert!((sum - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rmse_symmetric_and_nonnegative(a in proptest::collection::vec(-1e3f64..1e3, 1..50), shift in -10.0f64..10.0) {
        let b: Vec<f64> = a.iter().map(|x| x + shift).collect();
        let r = rmse(&a, &b).unwrap();
        prop_assert_eq!(r, rmse(&b, &a).unwrap());
        prop_assert!((r - shift.abs()).abs() < 1e-9);
        prop_assert_eq!(rmse(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn delta_buckets_partition(deltas in proptest::collection::vec(-5.0f64..5.0, 0..40)) {
        let named: Vec<(String, f64)> = deltas.iter().enumerate().map(|(i, &d)| (format!("d{i}"), d)).collect();
        let b = bucket_deltas(named);
        prop_assert_eq!(b.unchanged + b.worse + b.better, deltas.len());
        prop_assert_eq!(b.better, deltas.iter().filter(|&&d| d > 0.5 + 1e-9).count());
        prop_assert_eq!(b.avg_diff_defined, b.worse + b.better > 0);
    }

    #[test]
    fn spearman_bounded(x in proptest::collection::vec(-10.0f64..10.0, 2..40), seed in any::<u64>()) {
        let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| v * ((seed >> (i % 60)) & 1) as f64 - i as f64).collect();
        if let Some(r) = spearman(&x, &y) {
            prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&r));
        }
    }
}

#[test]
fn auc_examples() {
    assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
    assert_eq!(auc(&[0.5, 0.5, 0.5, 0.5], &[0.0, 1.0, 0.0, 1.0]).unwrap(), 0.5);
    assert_eq!(auc(&[0.1, 0.2], &[1.0, 1.0]), Err(MetricError::SingleClass));
    assert!(matches!(auc(&[0.1], &[1.0, 0.0]), Err(MetricError::LengthMismatch { .. })));
}

#[test]
fn rmse_example() {
    assert!((rmse(&[1.0, 2.0, 3.0], &[1.0, 2.0, 5.0]).unwrap() - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
    assert_eq!(rmse(&[], &[]), Err(MetricError::Empty));
}

#[test]
fn deltas_in_percent() {
    let d = report_delta(&report("a", MetricName::Auc, 0.80), &report("a", MetricName::Auc, 0.83));
    assert!((d - 3.0).abs() < 1e-9);
    let d = report_delta(&report("r", MetricName::Rmse, 2.0), &report("r", MetricName::Rmse, 2.2));
    assert!((d + 10.0).abs() < 1e-9);
}

#[test]
fn delta_table_and_pairing() {
    let base = vec![report("a", MetricName::Auc, 0.8), report("b", MetricName::Auc, 0.7), report("c", MetricName::Auc, 0.9)];
    let var = vec![report("a", MetricName::Auc, 0.802), report("b", MetricName::Auc, 0.6), report("c", MetricName::Auc, 0.95)];
    let b = delta_buckets(&base, &var).unwrap();
    assert_eq!((b.unchanged, b.worse, b.better), (1, 1, 1));
    assert!((b.avg_diff - (-10.0 + 5.0) / 2.0).abs() < 1e-9);
    let table = DeltaBucket::render_table(&[("vmfe".into(), b)]);
    assert!(table.contains("vmfe") && table.contains("Avg. diff.") && table.contains("-2.50%"));
    assert!(matches!(delta_buckets(&base, &var[..2]), Err(MetricError::UnpairedDataset(_))));
    let all_same = delta_buckets(&base, &base).unwrap();
    assert!(!all_same.avg_diff_defined);
    assert!(DeltaBucket::render_table(&[("same".into(), all_same)]).contains('*'));
}

#[test]
fn geometry_of_a_line_is_perfect() {
    let mut f = Matrix::zeros(16, 3);
    for k in 0..16 {
        f.row_mut(k)[0] = k as f64 * 0.5;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let g = geometry_from_features(&f, 500, &mut rng).unwrap();
    assert!(!g.degenerate);
    assert!((g.spearman - 1.0).abs() < 1e-12);
    let flat = Matrix::zeros(16, 3);
    let g = geometry_from_features(&flat, 500, &mut rng).unwrap();
    assert!(g.degenerate);
    assert_eq!(g.spearman, 0.0);
}
