//! Target-aware binning of numerical features.
//!
//! Bins come from growing an entropy-criterion decision tree on a single
//! feature, best-first, until the leaf budget is spent or no admissible split
//! improves the label entropy. Leaf boundaries become bin edges; each value is
//! then reported as a bin index plus a bounded multiplier that keeps its
//! position inside the training range.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Gains closer than this are treated as ties and resolved to the lowest threshold.
pub const GAIN_TIE_EPS: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum BinError {
    #[error("cannot fit bins on an empty feature")]
    EmptyInput,
    #[error("values and labels differ in length ({values} vs {labels})")]
    LengthMismatch { values: usize, labels: usize },
    #[error("invalid bin config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinConfig {
    pub n_bin: usize,
    pub min_leaf_size: usize,
    pub regression_target_bins: usize,
}

impl Default for BinConfig {
    fn default() -> Self {
        BinConfig { n_bin: 256, min_leaf_size: 16, regression_target_bins: 2 }
    }
}

impl BinConfig {
    pub fn validate(&self) -> Result<(), BinError> {
        if self.n_bin < 2 {
            return Err(BinError::InvalidConfig("n_bin must be at least 2".into()));
        }
        if self.min_leaf_size < 1 {
            return Err(BinError::InvalidConfig("min_leaf_size must be at least 1".into()));
        }
        if self.regression_target_bins < 1 {
            return Err(BinError::InvalidConfig("regression_target_bins must be at least 1".into()));
        }
        Ok(())
    }
}

/// Ascending interior edges of a fitted feature. The outermost edges are the
/// implicit sentinels -inf and +inf, so `edges.len() + 1` bins exist.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinBoundaries {
    pub edges: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

impl BinBoundaries {
    pub fn n_bins(&self) -> usize {
        self.edges.len() + 1
    }

    /// `k` with `e_k <= x < e_{k+1}`; values beyond the training range clamp.
    pub fn bin_index(&self, x: f64) -> usize {
        self.edges.partition_point(|&e| e <= x)
    }

    /// `0.5 + clip((x - min) / (max - min), 0, 1)`, or 1.0 for a constant feature.
    pub fn value_multiplier(&self, x: f64) -> f64 {
        if self.max <= self.min {
            return 1.0;
        }
        0.5 + ((x - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

pub fn bin_index(b: &BinBoundaries, x: f64) -> usize {
    b.bin_index(x)
}

pub fn value_multiplier(b: &BinBoundaries, x: f64) -> f64 {
    b.value_multiplier(x)
}

fn entropy(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let n = total as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum()
}

/// Best admissible threshold of one leaf (a contiguous run of the sorted data).
#[derive(Debug, Clone, Copy)]
struct Candidate {
    gain: f64,
    /// first sorted position belonging to the right child
    cut: usize,
}

struct Sorted {
    values: Vec<f64>,
    labels: Vec<usize>,
    n_classes: usize,
    min_leaf: usize,
}

impl Sorted {
    fn best_split(&self, start: usize, end: usize) -> Option<Candidate> {
        let len = end - start;
        if len < 2 * self.min_leaf || len < 2 {
            return None;
        }
        let mut total = vec![0usize; self.n_classes];
        for &l in &self.labels[start..end] {
            total[l] += 1;
        }
        let parent = entropy(&total, len);
        if parent <= 0.0 {
            return None;
        }
        let mut left = vec![0usize; self.n_classes];
        let mut right = total.clone();
        let mut best: Option<Candidate> = None;
        for i in start..end - 1 {
            let l = self.labels[i];
            left[l] += 1;
            right[l] -= 1;
            let n_left = i + 1 - start;
            if self.values[i] == self.values[i + 1] {
                continue;
            }
            let n_right = len - n_left;
            if n_left < self.min_leaf || n_right < self.min_leaf {
                continue;
            }
            let w_left = n_left as f64 / len as f64;
            let gain = parent - w_left * entropy(&left, n_left) - (1.0 - w_left) * entropy(&right, n_right);
            // thresholds ascend with i, so only a strictly larger gain replaces
            if best.is_none_or(|b| gain > b.gain + GAIN_TIE_EPS) {
                best = Some(Candidate { gain, cut: i + 1 });
            }
        }
        best.filter(|b| b.gain > GAIN_TIE_EPS)
    }
}

fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a && m <= b {
        m
    } else {
        b
    }
}

struct Leaf {
    start: usize,
    end: usize,
    split: Option<Candidate>,
}

/// Fits bin edges for one feature. `labels` are class ids (see
/// [`bucket_regression_targets`] for continuous targets).
pub fn fit_bins(values: &[f64], labels: &[usize], cfg: &BinConfig) -> Result<BinBoundaries, BinError> {
    cfg.validate()?;
    if values.len() != labels.len() {
        return Err(BinError::LengthMismatch { values: values.len(), labels: labels.len() });
    }
    let mut pairs: Vec<(f64, usize)> = values
        .iter()
        .zip(labels)
        .filter(|(v, _)| v.is_finite())
        .map(|(&v, &l)| (v, l))
        .collect();
    if pairs.is_empty() {
        return Err(BinError::EmptyInput);
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
    let n_classes = pairs.iter().map(|p| p.1).max().unwrap_or(0) + 1;
    let sorted = Sorted {
        values: pairs.iter().map(|p| p.0).collect(),
        labels: pairs.iter().map(|p| p.1).collect(),
        n_classes,
        min_leaf: cfg.min_leaf_size,
    };
    let n = sorted.values.len();
    let min = sorted.values[0];
    let max = sorted.values[n - 1];

    let mut leaves = vec![Leaf { start: 0, end: n, split: sorted.best_split(0, n) }];
    while leaves.len() < cfg.n_bin {
        // best-first: largest gain weighted by leaf share, ties to the leftmost leaf
        let mut pick: Option<(usize, f64)> = None;
        for (idx, leaf) in leaves.iter().enumerate() {
            if let Some(c) = leaf.split {
                let priority = c.gain * (leaf.end - leaf.start) as f64 / n as f64;
                let better = match pick {
                    None => true,
                    Some((best_idx, best_p)) => {
                        priority > best_p + GAIN_TIE_EPS
                            || ((priority - best_p).abs() <= GAIN_TIE_EPS
                                && leaf.start < leaves[best_idx].start)
                    }
                };
                if better {
                    pick = Some((idx, priority));
                }
            }
        }
        let Some((idx, _)) = pick else { break };
        let leaf = leaves.swap_remove(idx);
        let cut = leaf.split.expect("picked leaf has a split").cut;
        leaves.push(Leaf { start: leaf.start, end: cut, split: sorted.best_split(leaf.start, cut) });
        leaves.push(Leaf { start: cut, end: leaf.end, split: sorted.best_split(cut, leaf.end) });
    }
    leaves.sort_by_key(|l| l.start);
    let edges = leaves
        .iter()
        .skip(1)
        .map(|l| midpoint(sorted.values[l.start - 1], sorted.values[l.start]))
        .collect();
    Ok(BinBoundaries { edges, min, max })
}

/// Buckets continuous targets into `n_classes` quantile classes (median split
/// for 2) so the entropy criterion has class labels to work with.
pub fn bucket_regression_targets(targets: &[f64], n_classes: usize) -> Vec<usize> {
    if targets.is_empty() || n_classes <= 1 {
        return vec![0; targets.len()];
    }
    let mut sorted: Vec<f64> = targets.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    let cuts: Vec<f64> = (1..n_classes)
        .map(|q| {
            let pos = (q * sorted.len()) / n_classes;
            sorted[pos.min(sorted.len() - 1)]
        })
        .collect();
    targets.iter().map(|&y| cuts.partition_point(|&c| c <= y)).collect()
}
