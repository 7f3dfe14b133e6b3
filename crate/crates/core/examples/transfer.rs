//! Pre-train on four synthetic tables that share a feature-name pool, then
//! fine-tune on a small held-out table from pre-trained and from random
//! initialisation.
//!
//! cargo run --release --example transfer -- [seeds]

use std::time::Instant;

use tabtok::model::ModelConfig;
use tabtok::synthetic::{gen_synthetic, SyntheticTaskSpec, DEFAULT_NAME_POOL};
use tabtok::train::{finetune, pretrain, FinetuneConfig, Init, PretrainConfig};

fn main() -> anyhow::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let model = ModelConfig { n_bin: 8, ..ModelConfig::tiny() };
    let pool: Vec<String> = DEFAULT_NAME_POOL[..12].iter().map(|s| s.to_string()).collect();
    let spec = |name: String, n_rows: usize, n_num_features: usize, seed: u64| SyntheticTaskSpec {
        name,
        n_rows,
        seed,
        n_num_features,
        n_cat_features: 0,
        name_pool: pool.clone(),
        ..SyntheticTaskSpec::default()
    };
    let mut gains = Vec::new();
    for seed in 0..seeds {
        let t0 = Instant::now();
        let tables: Vec<_> = (0..4)
            .map(|i| gen_synthetic(&spec(format!("pre{i}"), 1000, 9, 100 * seed + i)))
            .collect::<Result<_, _>>()?;
        let cfg = PretrainConfig { model, epochs: 40, batch_size: 128, peak_lr: 3e-3, seed, ..PretrainConfig::default() };
        let out = pretrain(&tables, &cfg, &mut std::io::sink())?;
        let held = gen_synthetic(&spec("held-out".into(), 128, 6, 100 * seed + 99))?;
        let ft = FinetuneConfig { lr: 3e-4, seed, ..FinetuneConfig::default() };
        let pre = finetune(Init::Pretrained(&out.checkpoint), &held, &ft)?;
        let rnd = finetune(Init::Random { model, max_words: 4096 }, &held, &ft)?;
        println!(
            "seed {seed}: pretrained AUC {:.4} (best epoch {})  random AUC {:.4} (best epoch {})  {:.0}s",
            pre.report.value,
            pre.best_epoch,
            rnd.report.value,
            rnd.best_epoch,
            t0.elapsed().as_secs_f64()
        );
        gains.push(pre.report.value - rnd.report.value);
    }
    println!("mean gain {:+.4}", gains.iter().sum::<f64>() / gains.len() as f64);
    Ok(())
}
