//! Run the standard ablation variants on one synthetic table and print the
//! delta table.
//!
//! cargo run --release --example ablation

use tabtok::experiment::{run_ablation_suite, STANDARD_VARIANTS};
use tabtok::model::ModelConfig;
use tabtok::synthetic::{gen_synthetic, SyntheticTaskSpec};
use tabtok::train::FinetuneConfig;

fn main() -> anyhow::Result<()> {
    let tables = vec![
        gen_synthetic(&SyntheticTaskSpec { name: "a".into(), n_rows: 400, seed: 1, noise: 0.05, ..SyntheticTaskSpec::default() })?,
        gen_synthetic(&SyntheticTaskSpec { name: "b".into(), n_rows: 400, seed: 2, noise: 0.05, ..SyntheticTaskSpec::default() })?,
    ];
    let variants: Vec<Vec<String>> = STANDARD_VARIANTS.iter().map(|v| vec![v.to_string()]).collect();
    let cfg = FinetuneConfig { max_epochs: 30, lr: 1e-3, ..FinetuneConfig::default() };
    let suite = run_ablation_suite(ModelConfig::tiny(), 4096, &variants, &tables, &cfg)?;
    println!("{}", suite.render());
    Ok(())
}
