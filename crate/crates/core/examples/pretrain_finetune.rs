//! Pre-train on two synthetic tables, save the checkpoint, load it back and
//! fine-tune on a third table under each initialisation arm.
//!
//! cargo run --release --example pretrain_finetune

use tabtok::checkpoint::{load_checkpoint, save_checkpoint};
use tabtok::model::ModelConfig;
use tabtok::synthetic::{gen_synthetic, SyntheticTaskSpec};
use tabtok::table::Task;
use tabtok::train::{finetune, pretrain, FinetuneConfig, Init, PretrainConfig, TaskMode};

fn main() -> anyhow::Result<()> {
    let tables = vec![
        gen_synthetic(&SyntheticTaskSpec { name: "clinic".into(), n_rows: 600, seed: 1, ..SyntheticTaskSpec::default() })?,
        gen_synthetic(&SyntheticTaskSpec { name: "housing".into(), n_rows: 600, seed: 2, task: Task::Regression, ..SyntheticTaskSpec::default() })?,
    ];
    let model = ModelConfig { n_bin: 8, ..ModelConfig::tiny() };
    let cfg = PretrainConfig { model, epochs: 6, batch_size: 128, peak_lr: 3e-3, task_mode: TaskMode::Joint, ..PretrainConfig::default() };
    // one JSON record per step and per epoch
    let mut log = Vec::new();
    let out = pretrain(&tables, &cfg, &mut log)?;
    println!("pre-trained {} epochs, {} steps, {:.4}s/step, best avg val loss {:.4}", out.epochs.len(), out.total_steps, out.secs_per_step, out.checkpoint.best_val_loss.unwrap_or(f64::NAN));
    for e in &out.epochs {
        println!("  epoch {} val loss {:.4}", e.epoch, e.avg_val_loss);
    }

    let dir = std::env::temp_dir().join("tabtok-example-ckpt");
    save_checkpoint(&out.checkpoint, &dir)?;
    let ckpt = load_checkpoint(&dir)?;
    println!("checkpoint at {} with {} heads", dir.display(), ckpt.heads.len());

    let target = gen_synthetic(&SyntheticTaskSpec { name: "target".into(), n_rows: 200, seed: 9, ..SyntheticTaskSpec::default() })?;
    let ft = FinetuneConfig { lr: 3e-4, max_epochs: 60, ..FinetuneConfig::default() };
    for init in [Init::Pretrained(&ckpt), Init::VocabOnly(&ckpt), Init::Random { model, max_words: 4096 }] {
        let arm = init.arm();
        let r = finetune(init, &target, &ft)?;
        println!("{arm:<12} test AUC {:.4} (best epoch {}, {} epochs run)", r.report.value, r.best_epoch, r.epochs_run);
    }
    Ok(())
}
