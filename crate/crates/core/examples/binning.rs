//! Supervised binning of one numerical column and the magnitude token each
//! value maps to.
//!
//! cargo run --release --example binning

use tabtok::discretize::{fit_bins, BinConfig};

fn main() -> anyhow::Result<()> {
    // glucose readings; positive inside two bands, with a little label noise
    let values: Vec<f64> = (0..60).map(|i| 70.0 + 2.0 * i as f64).collect();
    let labels: Vec<usize> = values
        .iter()
        .enumerate()
        .map(|(i, &v)| usize::from(((100.0..126.0).contains(&v) || v >= 160.0) != (i % 11 == 5)))
        .collect();
    for n_bin in [2, 4, 8] {
        let cfg = BinConfig { n_bin, min_leaf_size: 4, regression_target_bins: 2 };
        let b = fit_bins(&values, &labels, &cfg)?;
        println!("n_bin {n_bin}: {} bins, edges {:?}, range [{}, {}]", b.n_bins(), b.edges, b.min, b.max);
        for x in [70.0, 100.0, 125.0, 127.0, 188.0] {
            println!("  {x:>6} -> bin {} multiplier {:.3}", b.bin_index(x), b.value_multiplier(x));
        }
    }
    Ok(())
}
