//! Turns table rows into per-feature token runs.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::NumericEncoding;
use crate::discretize::{bucket_regression_targets, fit_bins, BinBoundaries, BinConfig, BinError};
use crate::encoder::{FeatureTokens, FeatureValue};
use crate::table::{Cell, ColumnKind, Dataset, FeatureSchema, Task, MISSING_TEXT};
use crate::vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("feature `{column}`: {source}")]
    Bins { column: String, source: BinError },
    #[error("dataset schema differs from the fitted schema")]
    SchemaMismatch,
}

/// Writes a number as text: six significant digits, then the shortest
/// decimal that round-trips.
pub fn format_number(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x.is_finite() { "0".into() } else { MISSING_TEXT.into() };
    }
    let rounded: f64 = format!("{x:.5e}").parse().unwrap_or(x);
    format!("{rounded}")
}

/// Per-table state fitted on the training split: bin edges for every
/// numerical column and the regression target scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TablePreprocessor {
    pub schema: FeatureSchema,
    pub bins: Vec<Option<BinBoundaries>>,
    pub encoding: NumericEncoding,
    pub target_mean: f64,
    pub target_std: f64,
}

/// A table ready for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedTable {
    pub rows: Vec<Vec<FeatureTokens>>,
    /// training targets: 0/1 for binclass, standardized for regression
    pub targets: Vec<f64>,
    pub raw_targets: Vec<f64>,
    pub task: Task,
}

impl EncodedTable {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

impl TablePreprocessor {
    pub fn fit(train: &Dataset, cfg: &BinConfig, encoding: NumericEncoding) -> Result<Self, PreprocessError> {
        let labels: Vec<usize> = match train.task() {
            Task::Binclass => train.targets.iter().map(|&y| usize::from(y > 0.5)).collect(),
            Task::Regression => bucket_regression_targets(&train.targets, cfg.regression_target_bins),
        };
        let mut bins = Vec::with_capacity(train.schema.columns.len());
        for (j, col) in train.schema.columns.iter().enumerate() {
            if col.kind != ColumnKind::Numerical {
                bins.push(None);
                continue;
            }
            let (values, ls): (Vec<f64>, Vec<usize>) = train
                .rows
                .iter()
                .zip(&labels)
                .filter_map(|(r, &l)| match r[j] {
                    Cell::Num(v) => Some((v, l)),
                    _ => None,
                })
                .unzip();
            let b = if values.is_empty() {
                // all missing in training: a single bin over a degenerate range
                BinBoundaries { edges: vec![], min: 0.0, max: 0.0 }
            } else {
                fit_bins(&values, &ls, cfg).map_err(|source| PreprocessError::Bins { column: col.name.clone(), source })?
            };
            bins.push(Some(b));
        }
        let (target_mean, target_std) = match train.task() {
            Task::Binclass => (0.0, 1.0),
            Task::Regression => {
                let n = train.targets.len() as f64;
                let mean = train.targets.iter().sum::<f64>() / n;
                let var = train.targets.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
                let std = var.sqrt();
                (mean, if std > 1e-12 { std } else { 1.0 })
            }
        };
        Ok(TablePreprocessor { schema: train.schema.clone(), bins, encoding, target_mean, target_std })
    }

    pub fn task(&self) -> Task {
        self.schema.target.task
    }

    pub fn scale_target(&self, y: f64) -> f64 {
        (y - self.target_mean) / self.target_std
    }

    pub fn unscale_prediction(&self, p: f64) -> f64 {
        p * self.target_std + self.target_mean
    }

    pub fn encode_row(&self, vocab: &Vocabulary, row: &[Cell]) -> Vec<FeatureTokens> {
        self.schema
            .columns
            .iter()
            .zip(row)
            .zip(&self.bins)
            .map(|((col, cell), bins)| {
                let name = vocab.encode_text(&col.name);
                let value = match (cell, bins) {
                    (Cell::Num(x), Some(b)) => match self.encoding {
                        NumericEncoding::Rmt => FeatureValue::Magnitude { bin: b.bin_index(*x), multiplier: b.value_multiplier(*x) },
                        NumericEncoding::Vmfe => FeatureValue::NameScaled { multiplier: b.value_multiplier(*x) },
                        NumericEncoding::Value2Str => FeatureValue::Text(vocab.encode_text(&format_number(*x))),
                    },
                    (Cell::Missing, Some(_)) => match self.encoding {
                        NumericEncoding::Rmt => FeatureValue::Missing,
                        _ => FeatureValue::Text(vocab.encode_text(MISSING_TEXT)),
                    },
                    (Cell::Text(t), _) => FeatureValue::Text(vocab.encode_text(t)),
                    (_, _) => FeatureValue::Text(vocab.encode_text(MISSING_TEXT)),
                };
                FeatureTokens { name, value }
            })
            .collect()
    }

    pub fn encode(&self, vocab: &Vocabulary, ds: &Dataset) -> Result<EncodedTable, PreprocessError> {
        if ds.schema != self.schema {
            return Err(PreprocessError::SchemaMismatch);
        }
        Ok(EncodedTable {
            rows: ds.rows.iter().map(|r| self.encode_row(vocab, r)).collect(),
            targets: ds.targets.iter().map(|&y| self.scale_target(y)).collect(),
            raw_targets: ds.targets.clone(),
            task: ds.task(),
        })
    }
}

/// Texts a vocabulary should cover for this table: feature names, value
/// texts and, for the value-as-text encoding, the written-out numbers.
pub fn corpus_texts(ds: &Dataset, encoding: NumericEncoding) -> Vec<String> {
    let mut out: Vec<String> = ds.schema.columns.iter().map(|c| c.name.clone()).collect();
    out.push(MISSING_TEXT.to_string());
    for col in &ds.schema.columns {
        if let Some(map) = &col.category_map {
            out.extend(map.values().cloned());
        }
    }
    for row in &ds.rows {
        for cell in row {
            match cell {
                Cell::Text(t) => out.push(t.clone()),
                Cell::Num(x) if encoding == NumericEncoding::Value2Str => out.push(format_number(*x)),
                _ => {}
            }
        }
    }
    out
}
