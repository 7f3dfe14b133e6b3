//! Ablation harness: fine-tunes the default configuration and each variant
//! on the same tables and buckets the per-table metric changes.

use serde::{Deserialize, Serialize};

use crate::ablation::AblationConfig;
use crate::metrics::{delta_buckets, DeltaBucket, MetricReport};
use crate::model::ModelConfig;
use crate::table::Dataset;
use crate::train::{finetune, FinetuneConfig, Init, TrainError};

/// The six standard variants compared against the default configuration.
pub const STANDARD_VARIANTS: &[&str] = &["value2str", "vmfe", "no-ifa", "nbin=32", "nbin=128", "valpos"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRun {
    pub tag: String,
    pub reports: Vec<MetricReport>,
    pub secs_per_step: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationSuite {
    pub base: AblationRun,
    pub variants: Vec<(AblationRun, DeltaBucket)>,
}

impl AblationSuite {
    pub fn render(&self) -> String {
        let rows: Vec<(String, DeltaBucket)> = self.variants.iter().map(|(r, b)| (r.tag.clone(), b.clone())).collect();
        let mut s = DeltaBucket::render_table(&rows);
        s.push_str(&format!("\n{:<12} {:>14}\n", "run", "secs/step"));
        for r in std::iter::once(&self.base).chain(self.variants.iter().map(|(r, _)| r)) {
            s.push_str(&format!("{:<12} {:>14.6}\n", r.tag, r.secs_per_step));
        }
        s
    }
}

fn run_one(tag: String, model: ModelConfig, max_words: usize, datasets: &[Dataset], cfg: &FinetuneConfig) -> Result<AblationRun, TrainError> {
    let mut reports = Vec::new();
    let mut secs = 0.0;
    for ds in datasets {
        let mut out = finetune(Init::Random { model, max_words }, ds, cfg)?;
        out.report.arm = tag.clone();
        secs += out.secs_per_step;
        reports.push(out.report);
    }
    Ok(AblationRun { tag, reports, secs_per_step: secs / datasets.len().max(1) as f64 })
}

/// Runs the default `model` and every variant (each a list of ablation
/// tokens applied on top of it) from random initialisation.
pub fn run_ablation_suite(
    model: ModelConfig,
    max_words: usize,
    variants: &[Vec<String>],
    datasets: &[Dataset],
    cfg: &FinetuneConfig,
) -> Result<AblationSuite, TrainError> {
    if datasets.is_empty() {
        return Err(TrainError::EmptyDatasetList);
    }
    let base = run_one(model.ablation.tag(), model, max_words, datasets, cfg)?;
    let mut out = Vec::new();
    for tokens in variants {
        let mut ab: AblationConfig = model.ablation;
        for t in tokens {
            ab.apply(t).map_err(|e| TrainError::InvalidConfig(e.to_string()))?;
        }
        let run = run_one(ab.tag(), ModelConfig { ablation: ab, ..model }, max_words, datasets, cfg)?;
        let bucket = delta_buckets(&base.reports, &run.reports)?;
        out.push((run, bucket));
    }
    Ok(AblationSuite { base, variants: out })
}
