//! Evaluation metrics and reports.

use std::fmt;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backbone::{self, RegHead};
use crate::graph::{Graph, ParamId, ParamStore};
use crate::table::{ColumnKind, FeatureSchema, Task};
use crate::tensor::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("auc needs both classes present")]
    SingleClass,
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("schema has no numerical feature")]
    ZeroNumerical,
    #[error("dataset `{0}` has no counterpart")]
    UnpairedDataset(String),
    #[error("reports use different metrics for `{0}`")]
    MetricMismatch(String),
    #[error("need at least 10 sample pairs and 2 bins")]
    TooFewPairs,
}

/// Average ranks (1-based) with ties sharing the mean of their positions.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i + 1;
        while j < idx.len() && x[idx[j]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &idx[i..j] {
            ranks[k] = r;
        }
        i = j;
    }
    ranks
}

/// Area under the ROC curve via the rank-sum statistic.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64, MetricError> {
    if scores.len() != labels.len() {
        return Err(MetricError::LengthMismatch(scores.len(), labels.len()));
    }
    let pos = labels.iter().filter(|&&y| y > 0.5).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let ranks = average_ranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &y)| y > 0.5).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

pub fn rmse(pred: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    if pred.len() != y.len() {
        return Err(MetricError::LengthMismatch(pred.len(), y.len()));
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    let mse = pred.iter().zip(y).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// Ratio of categorical to numerical feature counts.
pub fn alpha_stat(schema: &FeatureSchema) -> Result<f64, MetricError> {
    let num = schema.count_kind(ColumnKind::Numerical);
    if num == 0 {
        return Err(MetricError::ZeroNumerical);
    }
    Ok(schema.count_kind(ColumnKind::Categorical) as f64 / num as f64)
}

/// Spearman rank correlation. `None` when either side has constant ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len(), "spearman length");
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricName {
    Auc,
    Rmse,
}

impl MetricName {
    pub fn for_task(task: Task) -> Self {
        match task {
            Task::Binclass => MetricName::Auc,
            Task::Regression => MetricName::Rmse,
        }
    }

    pub fn higher_is_better(self) -> bool {
        self == MetricName::Auc
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub dataset: String,
    pub task: Task,
    pub metric: MetricName,
    pub value: f64,
    /// train / validation / test row counts
    pub split_sizes: [usize; 3],
    pub seed: u64,
    /// `pretrained`, `random-init`, `vocab-init` or an ablation tag
    pub arm: String,
}

/// Score of predictions under the task's metric. Binclass predictions may be
/// logits or probabilities.
pub fn task_metric(task: Task, pred: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    match task {
        Task::Binclass => auc(pred, y),
        Task::Regression => rmse(pred, y),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaBucket {
    /// |delta| <= 0.5%
    pub unchanged: usize,
    /// delta < -0.5%
    pub worse: usize,
    /// delta > 0.5%
    pub better: usize,
    /// mean delta (percent) over the datasets outside the unchanged band
    pub avg_diff: f64,
    /// false when every dataset fell in the unchanged band
    pub avg_diff_defined: bool,
    /// per-dataset deltas in percent, in input order
    pub deltas: Vec<(String, f64)>,
}

pub const DELTA_THRESHOLD: f64 = 0.5;

/// Delta in percent, positive meaning the variant is better. AUC deltas are
/// absolute percentage points; RMSE deltas are relative reductions.
pub fn report_delta(base: &MetricReport, variant: &MetricReport) -> f64 {
    match base.metric {
        MetricName::Auc => (variant.value - base.value) * 100.0,
        MetricName::Rmse => {
            if base.value == 0.0 {
                if variant.value == 0.0 { 0.0 } else { -100.0 }
            } else {
                (base.value - variant.value) / base.value * 100.0
            }
        }
    }
}

/// Buckets percent deltas by the 0.5% band.
pub fn bucket_deltas(deltas: Vec<(String, f64)>) -> DeltaBucket {
    let mut out = DeltaBucket { unchanged: 0, worse: 0, better: 0, avg_diff: 0.0, avg_diff_defined: false, deltas: Vec::new() };
    let mut sum = 0.0;
    for (_, d) in &deltas {
        if d.abs() <= DELTA_THRESHOLD + 1e-9 {
            out.unchanged += 1;
        } else {
            if *d < 0.0 {
                out.worse += 1;
            } else {
                out.better += 1;
            }
            sum += d;
        }
    }
    let changed = out.worse + out.better;
    if changed > 0 {
        out.avg_diff = sum / changed as f64;
        out.avg_diff_defined = true;
    }
    out.deltas = deltas;
    out
}

pub fn delta_buckets(base: &[MetricReport], variant: &[MetricReport]) -> Result<DeltaBucket, MetricError> {
    let mut deltas = Vec::with_capacity(base.len());
    for b in base {
        let v = variant
            .iter()
            .find(|v| v.dataset == b.dataset)
            .ok_or_else(|| MetricError::UnpairedDataset(b.dataset.clone()))?;
        if v.metric != b.metric {
            return Err(MetricError::MetricMismatch(b.dataset.clone()));
        }
        deltas.push((b.dataset.clone(), report_delta(b, v)));
    }
    if let Some(v) = variant.iter().find(|v| !base.iter().any(|b| b.dataset == v.dataset)) {
        return Err(MetricError::UnpairedDataset(v.dataset.clone()));
    }
    Ok(bucket_deltas(deltas))
}

impl DeltaBucket {
    /// Plain-text table with one row per named variant.
    pub fn render_table(rows: &[(String, DeltaBucket)]) -> String {
        let width = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max("variant".len());
        let mut s = format!("{:<width$}  {:>9}  {:>9}  {:>9}  {:>10}\n", "variant", "|Δ|≤0.5%", "Δ<-0.5%", "Δ>0.5%", "Avg. diff.");
        for (name, b) in rows {
            let avg = if b.avg_diff_defined { format!("{:+.2}%", b.avg_diff) } else { "0.00%*".to_string() };
            s.push_str(&format!("{:<width$}  {:>9}  {:>9}  {:>9}  {:>10}\n", name, b.unchanged, b.worse, b.better, avg));
        }
        if rows.iter().any(|(_, b)| !b.avg_diff_defined) {
            s.push_str("* no dataset outside the 0.5% band\n");
        }
        s
    }
}

impl fmt::Display for DeltaBucket {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&DeltaBucket::render_table(&[("variant".to_string(), self.clone())]))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryPair {
    pub k_a: usize,
    pub k_b: usize,
    pub index_distance: usize,
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometryReport {
    /// 0 when degenerate
    pub spearman: f64,
    /// true when distances (or index gaps) are all equal
    pub degenerate: bool,
    pub pairs: Vec<GeometryPair>,
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Geometry report over precomputed feature rows `f(k)`, one per bin.
pub fn geometry_from_features<R: Rng + ?Sized>(features: &Matrix, sample_pairs: usize, rng: &mut R) -> Result<GeometryReport, MetricError> {
    let n = features.rows;
    if sample_pairs < 10 || n < 2 {
        return Err(MetricError::TooFewPairs);
    }
    let mut pairs = Vec::with_capacity(sample_pairs);
    while pairs.len() < sample_pairs {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        pairs.push(GeometryPair { k_a: a, k_b: b, index_distance: a.abs_diff(b), distance: l2(features.row(a), features.row(b)) });
    }
    let gaps: Vec<f64> = pairs.iter().map(|p| p.index_distance as f64).collect();
    let dists: Vec<f64> = pairs.iter().map(|p| p.distance).collect();
    let rho = spearman(&gaps, &dists);
    Ok(GeometryReport { spearman: rho.unwrap_or(0.0), degenerate: rho.is_none(), pairs })
}

/// Rank correlation between bin-index gaps and distances of the regularizer
/// features `f(k)` over randomly sampled bin pairs.
pub fn magnitude_geometry_report<R: Rng + ?Sized>(
    store: &ParamStore,
    magnitude: ParamId,
    reg_head: &RegHead,
    sample_pairs: usize,
    rng: &mut R,
) -> Result<GeometryReport, MetricError> {
    let n_bin = store.get(magnitude).rows - 1;
    let bins: Vec<usize> = (0..n_bin).collect();
    let mut g = Graph::new(store);
    let f = backbone::reg_features(&mut g, magnitude, reg_head, &bins);
    geometry_from_features(g.value(f), sample_pairs, rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.9, 0.8, 0.3], &[1.0, 1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.2, 0.8], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(auc(&[0.5, 0.5, 0.1], &[1.0, 0.0, 0.0]).unwrap(), 0.75);
        assert_eq!(auc(&[0.5, 0.1], &[1.0, 1.0]), Err(MetricError::SingleClass));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert!((rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(rmse(&[1.0], &[4.0]).unwrap(), 3.0);
        assert_eq!(rmse(&[1.0], &[4.0, 2.0]), Err(MetricError::LengthMismatch(1, 2)));
    }

    fn rep(name: &str, v: f64) -> MetricReport {
        MetricReport {
            dataset: name.into(),
            task: Task::Binclass,
            metric: MetricName::Auc,
            value: v,
            split_sizes: [10, 2, 3],
            seed: 0,
            arm: "x".into(),
        }
    }

    #[test]
    fn delta_examples() {
        let base = vec![rep("a", 0.8), rep("b", 0.8), rep("c", 0.8)];
        let var = vec![rep("a", 0.802), rep("b", 0.78), rep("c", 0.74)];
        let b = delta_buckets(&base, &var).unwrap();
        assert_eq!((b.unchanged, b.worse, b.better), (1, 2, 0));
        assert!((b.avg_diff + 4.0).abs() < 1e-9);
        let same = delta_buckets(&base, &base).unwrap();
        assert_eq!((same.unchanged, same.worse, same.better), (3, 0, 0));
        assert!(!same.avg_diff_defined && same.avg_diff == 0.0);
        assert_eq!(delta_buckets(&base, &[rep("a", 0.8)]), Err(MetricError::UnpairedDataset("b".into())));
        let table = DeltaBucket::render_table(&[("vmfe".into(), b)]);
        assert!(table.contains("Avg. diff.") && table.contains("-4.00%"));
    }

    #[test]
    fn spearman_degenerate() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[2.0, 4.0, 9.0]), Some(1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[0.0, 0.0, 0.0]), None);
    }
}
