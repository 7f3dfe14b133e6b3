//! Encode rows of a small table into per-feature token runs under each
//! numeric encoding.
//!
//! cargo run --release --example tokenize

use tabtok::ablation::NumericEncoding;
use tabtok::discretize::BinConfig;
use tabtok::preprocess::{corpus_texts, TablePreprocessor};
use tabtok::table::{Cell, Column, Dataset, FeatureSchema, Target, Task};
use tabtok::vocab::Vocabulary;

fn main() -> anyhow::Result<()> {
    let schema = FeatureSchema::new(
        vec![Column::numerical("blood pressure"), Column::categorical("smoker", [("0", "no"), ("1", "yes")]), Column::string("occupation")],
        Target { name: "disease".into(), task: Task::Binclass },
    )?;
    let jobs = ["teacher", "nurse", "farmer", "driver"];
    let ds = Dataset {
        name: "clinic".into(),
        schema,
        rows: (0..40)
            .map(|i| {
                let bp = if i == 3 { Cell::Missing } else { Cell::Num(90.0 + 1.5 * i as f64) };
                vec![bp, Cell::Text(if i % 3 == 0 { "yes" } else { "no" }.into()), Cell::Text(jobs[i % 4].into())]
            })
            .collect(),
        targets: (0..40).map(|i| f64::from(i >= 25)).collect(),
    };
    let cfg = BinConfig { n_bin: 8, min_leaf_size: 4, regression_target_bins: 2 };
    for enc in [NumericEncoding::Rmt, NumericEncoding::Vmfe, NumericEncoding::Value2Str] {
        let pre = TablePreprocessor::fit(&ds, &cfg, enc)?;
        let vocab = Vocabulary::build(&corpus_texts(&ds, enc), 4096, 8)?;
        println!("{enc:?}: vocabulary of {} ids", vocab.size());
        for r in [0, 3, 39] {
            let row = pre.encode_row(&vocab, &ds.rows[r]);
            println!("  row {r}:");
            for (col, f) in ds.schema.columns.iter().zip(&row) {
                println!("    {:<15} name {:?} value {:?}", col.name, f.name.ids, f.value);
            }
        }
    }
    Ok(())
}
