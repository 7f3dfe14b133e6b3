use proptest::prelude::*;
use tabtok::schedule::{lr_at, warmup_steps};

proptest! {
    #[test]
    fn bounded_and_zero_at_ends(total in 2usize..20_000, frac in 0.0f64..1.0, peak in 1e-7f64..1.0) {
        prop_assert_eq!(lr_at(0, total, peak, frac), 0.0);
        prop_assert_eq!(lr_at(total, total, peak, frac), 0.0);
        let w = warmup_steps(total, frac);
        prop_assert!(w >= 1 && w < total);
        prop_assert!((lr_at(w, total, peak, frac) - peak).abs() <= 1e-15 * peak.max(1.0));
        for s in [1, w / 2, w, w + 1, (w + total) / 2, total - 1] {
            let lr = lr_at(s, total, peak, frac);
            prop_assert!(lr >= 0.0 && lr <= peak * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rises_then_falls(total in 2usize..3000, frac in 0.01f64..0.99) {
        let w = warmup_steps(total, frac);
        let lrs: Vec<f64> = (0..=total).map(|s| lr_at(s, total, 1.0, frac)).collect();
        prop_assert!(lrs[..=w].windows(2).all(|p| p[0] <= p[1]));
        prop_assert!(lrs[w..].windows(2).all(|p| p[0] >= p[1]));
    }
}

#[test]
fn listed_values() {
    assert!((lr_at(60, 1000, 1e-4, 0.06) - 1e-4).abs() < 1e-12);
    assert!((lr_at(530, 1000, 1e-4, 0.06) - 5e-5).abs() < 1e-12);
    assert_eq!(warmup_steps(1000, 0.06), 60);
}
