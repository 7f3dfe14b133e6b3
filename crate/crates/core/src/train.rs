//! Multi-table pre-training and single-table fine-tuning.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::backbone::{self, TripletSampler};
use crate::checkpoint::{Checkpoint, HeadInfo};
use crate::discretize::BinConfig;
use crate::encoder::FeatureTokens;
use crate::graph::{Gradients, ParamStore};
use crate::metrics::{self, MetricError, MetricName, MetricReport};
use crate::model::{ModelConfig, ModelError, TabModel};
use crate::optim::AdamW;
use crate::preprocess::{corpus_texts, EncodedTable, PreprocessError, TablePreprocessor};
use crate::schedule::lr_at;
use crate::table::{self, Dataset, SplitSpec, TableError, Task};
use crate::vocab::{VocabError, Vocabulary};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no datasets supplied")]
    EmptyDatasetList,
    #[error("dataset `{dataset}` is {task:?} but task mode is {mode:?}")]
    TaskModeMismatch { dataset: String, task: Task, mode: TaskMode },
    #[error("non-finite loss at step {step}")]
    NumericFailure { step: u64 },
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error("log write failed: {0}")]
    Log(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskMode {
    BinclassOnly,
    RegressionOnly,
    #[default]
    Joint,
}

impl TaskMode {
    pub fn admits(self, task: Task) -> bool {
        match self {
            TaskMode::BinclassOnly => task == Task::Binclass,
            TaskMode::RegressionOnly => task == Task::Regression,
            TaskMode::Joint => true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PretrainConfig {
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub peak_lr: f64,
    pub warmup_frac: f64,
    pub lambda: f64,
    pub val_frac: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub task_mode: TaskMode,
    pub max_words: usize,
    pub min_leaf_size: usize,
    pub regression_target_bins: usize,
    pub triplets_per_step: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            model: ModelConfig::default(),
            epochs: 30,
            batch_size: 512,
            peak_lr: 6e-4,
            warmup_frac: 0.06,
            lambda: 0.1,
            val_frac: 0.05,
            weight_decay: 0.01,
            seed: 0,
            task_mode: TaskMode::Joint,
            max_words: 4096,
            min_leaf_size: 16,
            regression_target_bins: 2,
            triplets_per_step: 32,
        }
    }
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        self.model.validate()?;
        if !(self.warmup_frac > 0.0 && self.warmup_frac < 1.0) {
            return bad("warmup_frac must lie in (0, 1)");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.peak_lr > 0.0) {
            return bad("peak_lr must be positive");
        }
        if self.lambda < 0.0 {
            return bad("lambda must be non-negative");
        }
        Ok(())
    }

    pub fn bin_config(&self) -> BinConfig {
        BinConfig {
            n_bin: self.model.effective_n_bin(),
            min_leaf_size: self.min_leaf_size,
            regression_target_bins: self.regression_target_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FinetuneConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub seed: u64,
    pub split: SplitSpec,
    pub min_leaf_size: usize,
    pub regression_target_bins: usize,
}

impl Default for FinetuneConfig {
    fn default() -> Self {
        FinetuneConfig {
            max_epochs: 200,
            batch_size: 64,
            lr: 1e-5,
            weight_decay: 0.0,
            patience: 16,
            seed: 0,
            split: SplitSpec::default(),
            min_leaf_size: 16,
            regression_target_bins: 2,
        }
    }
}

impl FinetuneConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        Ok(())
    }
}

/// Mean supervised loss over a table in eval mode.
pub fn eval_loss(model: &TabModel, head: usize, data: &EncodedTable) -> Result<f64, TrainError> {
    let pred = model.predict(&data.rows, head)?;
    backbone::supervised_loss(&pred, &data.targets, data.task).map_err(|e| TrainError::InvalidConfig(e.to_string()))
}

fn random_batch<R: Rng + ?Sized>(n: usize, size: usize, rng: &mut R) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    if size >= n {
        idx.shuffle(rng);
        return idx;
    }
    let (chosen, _) = idx.partial_shuffle(rng, size);
    chosen.to_vec()
}

fn batch_of<'a>(data: &'a EncodedTable, idx: &[usize]) -> (Vec<&'a [FeatureTokens]>, Vec<f64>) {
    (idx.iter().map(|&i| data.rows[i].as_slice()).collect(), idx.iter().map(|&i| data.targets[i]).collect())
}

fn write_record(log: &mut dyn Write, v: serde_json::Value) -> Result<(), TrainError> {
    writeln!(log, "{v}")?;
    Ok(())
}

/// Per-epoch record of a pre-training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub avg_val_loss: f64,
    pub per_dataset_val: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PretrainOutcome {
    /// best checkpoint by average validation loss
    pub checkpoint: Checkpoint,
    pub epochs: Vec<EpochRecord>,
    pub total_steps: u64,
    /// wall-clock seconds per optimizer step
    pub secs_per_step: f64,
}

/// Sets up vocabulary, preprocessors and a fresh model for a table set.
fn prepare_pretrain(
    datasets: &[Dataset],
    cfg: &PretrainConfig,
) -> Result<(TabModel, Vec<TablePreprocessor>, Vec<EncodedTable>, Vec<EncodedTable>, ChaCha8Rng), TrainError> {
    let mut splits = Vec::with_capacity(datasets.len());
    for (m, ds) in datasets.iter().enumerate() {
        splits.push(table::validation_carveout(ds, cfg.val_frac, cfg.seed.wrapping_add(m as u64))?);
    }
    let encoding = cfg.model.ablation.numeric_encoding;
    let corpus: Vec<String> = splits.iter().flat_map(|(tr, _)| corpus_texts(tr, encoding)).collect();
    let vocab = Vocabulary::build(&corpus, cfg.max_words, cfg.model.effective_n_bin())?;
    let mut pres = Vec::new();
    let mut trains = Vec::new();
    let mut vals = Vec::new();
    for (tr, va) in &splits {
        let pre = TablePreprocessor::fit(tr, &cfg.bin_config(), encoding)?;
        trains.push(pre.encode(&vocab, tr)?);
        vals.push(pre.encode(&vocab, va)?);
        pres.push(pre);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = TabModel::new(cfg.model, vocab, &mut rng)?;
    for _ in datasets {
        model.add_head(&mut rng);
    }
    Ok((model, pres, trains, vals, rng))
}

/// Pre-trains a shared trunk over several tables, one prediction head per
/// table, writing JSON-lines step and epoch records to `log`.
pub fn pretrain(datasets: &[Dataset], cfg: &PretrainConfig, log: &mut dyn Write) -> Result<PretrainOutcome, TrainError> {
    if datasets.is_empty() {
        return Err(TrainError::EmptyDatasetList);
    }
    cfg.validate()?;
    for ds in datasets {
        if !cfg.task_mode.admits(ds.task()) {
            return Err(TrainError::TaskModeMismatch { dataset: ds.name.clone(), task: ds.task(), mode: cfg.task_mode });
        }
    }
    let (mut model, pres, trains, vals, mut rng) = prepare_pretrain(datasets, cfg)?;
    let heads: Vec<HeadInfo> = datasets
        .iter()
        .zip(&pres)
        .map(|(ds, p)| HeadInfo { dataset: ds.name.clone(), task: ds.task(), preprocessor: p.clone() })
        .collect();
    let run_config = serde_json::to_value(cfg).expect("config serializes");

    let total_rows: usize = trains.iter().map(EncodedTable::len).sum();
    let steps_per_epoch = total_rows.div_ceil(cfg.batch_size).max(1);
    let total_steps = cfg.epochs * steps_per_epoch;
    let use_reg = cfg.model.ablation.use_triplet_reg && cfg.lambda > 0.0;
    let lambda = if use_reg { cfg.lambda } else { 0.0 };
    let sampler = TripletSampler { triplets_per_step: cfg.triplets_per_step };
    let mut opt = AdamW::new(cfg.weight_decay);

    let mut best: Option<Checkpoint> = None;
    let mut epochs = Vec::new();
    let mut step: u64 = 0;
    let mut train_secs = 0.0;
    for epoch in 0..cfg.epochs {
        for _ in 0..steps_per_epoch {
            let t0 = Instant::now();
            let m = rng.random_range(0..trains.len());
            let data = &trains[m];
            let idx = random_batch(data.len(), cfg.batch_size, &mut rng);
            let (rows, ys) = batch_of(data, &idx);
            let triplets = if use_reg { sampler.sample(model.n_bin(), &mut rng).map_err(|e| TrainError::InvalidConfig(e.to_string()))? } else { Vec::new() };
            let (parts, grads) = model.loss_and_grads(&rows, &ys, data.task, m, lambda, &triplets, Some(&mut rng))?;
            step += 1;
            if !parts.total.is_finite() {
                return Err(TrainError::NumericFailure { step });
            }
            let lr = lr_at(step as usize, total_steps, cfg.peak_lr, cfg.warmup_frac);
            opt.step(&mut model.params, &grads, lr);
            train_secs += t0.elapsed().as_secs_f64();
            write_record(
                log,
                json!({"step": step, "dataset_id": m, "lr": lr, "loss": parts.total, "l_sup": parts.sup, "l_reg": parts.reg}),
            )?;
        }
        let per: Vec<f64> = vals.iter().enumerate().map(|(m, v)| eval_loss(&model, m, v)).collect::<Result<_, _>>()?;
        let avg = per.iter().sum::<f64>() / per.len() as f64;
        if !avg.is_finite() {
            return Err(TrainError::NumericFailure { step });
        }
        write_record(log, json!({"epoch": epoch, "avg_val_loss": avg, "per_dataset_val": per}))?;
        epochs.push(EpochRecord { epoch, avg_val_loss: avg, per_dataset_val: per });
        if best.as_ref().and_then(|b| b.best_val_loss).is_none_or(|b| avg < b) {
            best = Some(Checkpoint::from_model(&model, heads.clone(), step, epoch as u64, Some(avg), run_config.clone()));
        }
    }
    Ok(PretrainOutcome {
        checkpoint: best.expect("at least one epoch"),
        epochs,
        total_steps: step,
        secs_per_step: train_secs / step.max(1) as f64,
    })
}

/// How the fine-tuned model is initialised.
#[derive(Debug, Clone, Copy)]
pub enum Init<'a> {
    /// trunk (tables, attention, encoder) from a checkpoint
    Pretrained(&'a Checkpoint),
    /// everything random, vocabulary built from the training split
    Random { model: ModelConfig, max_words: usize },
    /// checkpoint vocabulary, word and position tables; everything else random
    VocabOnly(&'a Checkpoint),
}

impl Init<'_> {
    pub fn arm(&self) -> &'static str {
        match self {
            Init::Pretrained(_) => "pretrained",
            Init::Random { .. } => "random-init",
            Init::VocabOnly(_) => "vocab-init",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinetuneOutcome {
    pub model: TabModel,
    pub preprocessor: TablePreprocessor,
    /// test metric of the best-validation model
    pub report: MetricReport,
    pub train_metric: f64,
    pub best_val_metric: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub stopped_early: bool,
    pub secs_per_step: f64,
}

impl FinetuneOutcome {
    pub fn checkpoint(&self) -> Checkpoint {
        let head = HeadInfo { dataset: self.report.dataset.clone(), task: self.report.task, preprocessor: self.preprocessor.clone() };
        Checkpoint::from_model(&self.model, vec![head], 0, self.best_epoch as u64, None, json!({"arm": self.report.arm}))
    }
}

fn copy_param(dst: &mut ParamStore, src: &ParamStore, name: &str) -> Result<(), TrainError> {
    let s = src.id(name).ok_or_else(|| ModelError::MissingParam(name.into()))?;
    let d = dst.id(name).ok_or_else(|| ModelError::MissingParam(name.into()))?;
    *dst.get_mut(d) = src.get(s).clone();
    Ok(())
}

/// Metric on a table with predictions mapped back to target units.
pub fn evaluate(model: &TabModel, head: usize, pre: &TablePreprocessor, data: &EncodedTable) -> Result<f64, TrainError> {
    let pred = model.predict(&data.rows, head)?;
    Ok(match data.task {
        Task::Binclass => metrics::auc(&pred, &data.raw_targets)?,
        Task::Regression => {
            let p: Vec<f64> = pred.iter().map(|&z| pre.unscale_prediction(z)).collect();
            metrics::rmse(&p, &data.raw_targets)?
        }
    })
}

/// Validation score where larger is better; falls back to negative loss
/// when AUC is undefined on a single-class split.
fn selection_score(model: &TabModel, pre: &TablePreprocessor, data: &EncodedTable) -> Result<f64, TrainError> {
    match evaluate(model, 0, pre, data) {
        Ok(v) if data.task == Task::Binclass => Ok(v),
        Ok(v) => Ok(-v),
        Err(TrainError::Metric(MetricError::SingleClass)) => Ok(-eval_loss(model, 0, data)?),
        Err(e) => Err(e),
    }
}

/// Splits `ds` by `cfg.split` and fine-tunes on it.
pub fn finetune(init: Init<'_>, ds: &Dataset, cfg: &FinetuneConfig) -> Result<FinetuneOutcome, TrainError> {
    let (tr, va, te) = table::split(ds, &cfg.split)?;
    finetune_splits(init, &tr, &va, &te, cfg)
}

/// Fine-tunes with only the supervised loss and early stopping on the
/// validation metric, then scores the best model on `test`.
pub fn finetune_splits(init: Init<'_>, train: &Dataset, val: &Dataset, test: &Dataset, cfg: &FinetuneConfig) -> Result<FinetuneOutcome, TrainError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut model, arm) = match init {
        Init::Pretrained(ck) => (ck.model.trunk_only(), init.arm()),
        Init::Random { model, max_words } => {
            let vocab = Vocabulary::build(&corpus_texts(train, model.ablation.numeric_encoding), max_words, model.effective_n_bin())?;
            (TabModel::new(model, vocab, &mut rng)?, init.arm())
        }
        Init::VocabOnly(ck) => {
            let mut fresh = TabModel::new(ck.model.config, ck.model.vocab.clone(), &mut rng)?;
            copy_param(&mut fresh.params, &ck.model.params, "emb.word")?;
            copy_param(&mut fresh.params, &ck.model.params, "emb.position")?;
            (fresh, init.arm())
        }
    };
    let head = model.add_head(&mut rng);
    debug_assert_eq!(head, 0);
    let bins = BinConfig {
        n_bin: model.config.effective_n_bin(),
        min_leaf_size: cfg.min_leaf_size,
        regression_target_bins: cfg.regression_target_bins,
    };
    let pre = TablePreprocessor::fit(train, &bins, model.config.ablation.numeric_encoding)?;
    let (tr, va, te) = (pre.encode(&model.vocab, train)?, pre.encode(&model.vocab, val)?, pre.encode(&model.vocab, test)?);

    let mut opt = AdamW::new(cfg.weight_decay);
    let mut best_score = f64::NEG_INFINITY;
    let mut best_params: Option<ParamStore> = None;
    let mut best_epoch = 0;
    let mut since_best = 0;
    let mut epochs_run = 0;
    let mut step: u64 = 0;
    let mut train_secs = 0.0;
    let mut order: Vec<usize> = (0..tr.len()).collect();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            let t0 = Instant::now();
            let (rows, ys) = batch_of(&tr, chunk);
            let (parts, grads): (_, Gradients) = model.loss_and_grads(&rows, &ys, tr.task, head, 0.0, &[], Some(&mut rng))?;
            step += 1;
            if !parts.total.is_finite() {
                return Err(TrainError::NumericFailure { step });
            }
            opt.step(&mut model.params, &grads, cfg.lr);
            train_secs += t0.elapsed().as_secs_f64();
        }
        epochs_run = epoch + 1;
        let score = selection_score(&model, &pre, &va)?;
        if !score.is_finite() {
            return Err(TrainError::NumericFailure { step });
        }
        if score > best_score {
            best_score = score;
            best_params = Some(model.params.clone());
            best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    if let Some(p) = best_params {
        model.params = p;
    }
    let metric = MetricName::for_task(tr.task);
    let value = evaluate(&model, head, &pre, &te)?;
    let train_metric = evaluate(&model, head, &pre, &tr)?;
    let best_val_metric = if metric.higher_is_better() { best_score } else { -best_score };
    Ok(FinetuneOutcome {
        report: MetricReport {
            dataset: train.name.clone(),
            task: tr.task,
            metric,
            value,
            split_sizes: [tr.len(), va.len(), te.len()],
            seed: cfg.seed,
            arm: arm.to_string(),
        },
        model,
        preprocessor: pre,
        train_metric,
        best_val_metric,
        best_epoch,
        epochs_run,
        stopped_early: epochs_run < cfg.max_epochs,
        secs_per_step: train_secs / step.max(1) as f64,
    })
}
