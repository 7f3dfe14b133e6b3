//! Pre-train with and without the magnitude triplet regularizer and compare
//! how well distances between magnitude-token features track bin gaps.
//!
//! cargo run --release --example geometry -- [seeds]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tabtok::metrics::magnitude_geometry_report;
use tabtok::model::ModelConfig;
use tabtok::synthetic::{gen_synthetic, SyntheticTaskSpec};
use tabtok::train::{pretrain, PretrainConfig};

fn main() -> anyhow::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    for seed in 0..seeds {
        let tables: Vec<_> = (0..4)
            .map(|i| gen_synthetic(&SyntheticTaskSpec { name: format!("pre{i}"), n_rows: 1000, seed: 100 * seed + i, ..SyntheticTaskSpec::default() }))
            .collect::<Result<_, _>>()?;
        let mut line = format!("seed {seed}:");
        for noreg in [false, true] {
            let mut model = ModelConfig { n_bin: 8, ..ModelConfig::tiny() };
            model.ablation.use_triplet_reg = !noreg;
            let cfg = PretrainConfig { model, epochs: 10, batch_size: 128, peak_lr: 3e-3, seed, ..PretrainConfig::default() };
            let out = pretrain(&tables, &cfg, &mut std::io::sink())?;
            let m = &out.checkpoint.model;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = magnitude_geometry_report(&m.params, m.tables.magnitude, &m.reg_head, 1000, &mut rng)?;
            line.push_str(&format!("  {} spearman {:.4}", if noreg { "noreg" } else { "reg" }, g.spearman));
        }
        println!("{line}");
    }
    Ok(())
}
