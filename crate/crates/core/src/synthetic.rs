//! Seeded synthetic tables whose feature names and category texts come from
//! a shared pool, so different tables carry the same meaning per name.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::table::{Cell, Column, Dataset, FeatureSchema, Target, Task};

pub const DEFAULT_NAME_POOL: &[&str] = &[
    "blood pressure", "annual income", "age", "body mass index", "credit score", "loan amount",
    "heart rate", "glucose level", "account balance", "years employed", "house size", "room count",
    "distance to city", "monthly spend", "cholesterol", "sleep hours", "daily steps", "tax rate",
    "debt ratio", "savings rate", "visit count", "order value", "session length", "page views",
];

pub const DEFAULT_CATEGORY_POOL: &[&str] = &[
    "red", "green", "blue", "amber", "violet", "teal", "coral", "olive", "ivory", "slate",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelRule {
    LinearInBins,
    CategoricalLookup,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticTaskSpec {
    pub name: String,
    pub n_rows: usize,
    pub n_num_features: usize,
    pub n_cat_features: usize,
    pub name_pool: Vec<String>,
    pub category_pool: Vec<String>,
    pub label_rule: LabelRule,
    pub task: Task,
    /// binclass: label flip probability; regression: noise standard deviation
    pub noise: f64,
    /// quantization levels of the numerical signal
    pub levels: usize,
    pub seed: u64,
}

impl Default for SyntheticTaskSpec {
    fn default() -> Self {
        SyntheticTaskSpec {
            name: "synthetic".into(),
            n_rows: 512,
            n_num_features: 4,
            n_cat_features: 2,
            name_pool: DEFAULT_NAME_POOL.iter().map(|s| s.to_string()).collect(),
            category_pool: DEFAULT_CATEGORY_POOL.iter().map(|s| s.to_string()).collect(),
            label_rule: LabelRule::LinearInBins,
            task: Task::Binclass,
            noise: 0.0,
            levels: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SyntheticError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
}

impl SyntheticTaskSpec {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        let bad = |m: &str| Err(SyntheticError::InvalidSpec(m.to_string()));
        if self.n_num_features + self.n_cat_features == 0 {
            return bad("need at least one feature");
        }
        if self.n_rows < 2 {
            return bad("need at least two rows");
        }
        if self.n_num_features + self.n_cat_features > self.name_pool.len() {
            return bad("name pool smaller than the feature count");
        }
        if self.n_cat_features > 0 && self.category_pool.len() < 2 {
            return bad("category pool needs at least two values");
        }
        if self.label_rule == LabelRule::CategoricalLookup && self.n_cat_features == 0 {
            return bad("categorical-lookup needs a categorical feature");
        }
        if self.levels < 2 {
            return bad("levels must be at least 2");
        }
        if !(0.0..=1.0).contains(&self.noise) && self.task == Task::Binclass {
            return bad("binclass noise must lie in [0, 1]");
        }
        if self.noise < 0.0 {
            return bad("noise must be non-negative");
        }
        Ok(())
    }
}

fn hash_unit(text: &str) -> f64 {
    let h = Sha256::digest(text.as_bytes());
    let v = u64::from_le_bytes(h[..8].try_into().expect("8 bytes"));
    (v >> 11) as f64 / (1u64 << 53) as f64
}

/// Stable signed weight of a feature name, magnitude in [0.5, 1.5].
pub fn name_weight(name: &str) -> f64 {
    let u = hash_unit(name);
    let mag = 0.5 + (u * 2.0).fract();
    if u < 0.5 { -mag } else { mag }
}

/// Stable label (0 or 1) attached to a category text.
pub fn category_label(text: &str) -> u8 {
    u8::from(hash_unit(&format!("label:{text}")) >= 0.5)
}

fn category_effect(text: &str) -> f64 {
    if category_label(text) == 1 { 0.5 } else { -0.5 }
}

pub fn gen_synthetic(spec: &SyntheticTaskSpec) -> Result<Dataset, SyntheticError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut names = spec.name_pool.clone();
    names.shuffle(&mut rng);
    let num_names: Vec<String> = names[..spec.n_num_features].to_vec();
    let cat_names: Vec<String> = names[spec.n_num_features..spec.n_num_features + spec.n_cat_features].to_vec();

    // each categorical feature draws its own value set, with both labels present when the pool allows
    let mut cat_values: Vec<Vec<String>> = Vec::new();
    let (ones, zeros): (Vec<&String>, Vec<&String>) = spec.category_pool.iter().partition(|t| category_label(t) == 1);
    for _ in 0..spec.n_cat_features {
        let k = spec.category_pool.len().min(4);
        let mut vals: Vec<String> = Vec::new();
        if !ones.is_empty() && !zeros.is_empty() {
            vals.push(ones[rng.random_range(0..ones.len())].clone());
            vals.push(zeros[rng.random_range(0..zeros.len())].clone());
        }
        let mut rest: Vec<&String> = spec.category_pool.iter().filter(|t| !vals.contains(t)).collect();
        rest.shuffle(&mut rng);
        vals.extend(rest.into_iter().take(k.saturating_sub(vals.len())).cloned());
        vals.sort();
        cat_values.push(vals);
    }

    let mut columns: Vec<Column> = num_names.iter().map(Column::numerical).collect();
    for (name, vals) in cat_names.iter().zip(&cat_values) {
        columns.push(Column::categorical(name.clone(), vals.iter().enumerate().map(|(i, v)| (i.to_string(), v.clone()))));
    }
    let schema = FeatureSchema::new(columns, Target { name: "target".into(), task: spec.task })
        .map_err(|e| SyntheticError::InvalidSpec(e.to_string()))?;

    // per-table affine ranges: only relative position inside a range matters
    let ranges: Vec<(f64, f64)> = (0..spec.n_num_features)
        .map(|_| {
            let scale = 10f64.powf(rng.random_range(-1.0..3.0));
            (rng.random_range(-1.0..1.0) * scale, scale)
        })
        .collect();

    let mut rows = Vec::with_capacity(spec.n_rows);
    let mut targets = Vec::with_capacity(spec.n_rows);
    let q = spec.levels as f64;
    for _ in 0..spec.n_rows {
        let mut row = Vec::with_capacity(spec.n_num_features + spec.n_cat_features);
        let mut score = 0.0;
        for (name, &(offset, scale)) in num_names.iter().zip(&ranges) {
            let u: f64 = rng.random();
            let level = (u * q).floor().min(q - 1.0);
            score += name_weight(name) * (level / (q - 1.0) - 0.5);
            row.push(Cell::Num(offset + scale * u));
        }
        let mut first_cat: Option<String> = None;
        for vals in &cat_values {
            let v = vals[rng.random_range(0..vals.len())].clone();
            score += category_effect(&v);
            first_cat.get_or_insert_with(|| v.clone());
            row.push(Cell::Text(v));
        }
        let y = match (spec.label_rule, spec.task) {
            (LabelRule::CategoricalLookup, Task::Binclass) => {
                let clean = f64::from(category_label(first_cat.as_deref().expect("categorical feature")));
                if rng.random::<f64>() < spec.noise { 1.0 - clean } else { clean }
            }
            (LabelRule::CategoricalLookup, Task::Regression) => {
                let clean = f64::from(category_label(first_cat.as_deref().expect("categorical feature")));
                {
                let z: f64 = StandardNormal.sample(&mut rng);
                clean + spec.noise * z
            }
            }
            (LabelRule::LinearInBins, Task::Binclass) => {
                let clean = f64::from(score > 0.0);
                if rng.random::<f64>() < spec.noise { 1.0 - clean } else { clean }
            }
            (LabelRule::LinearInBins, Task::Regression) => {
                let z: f64 = StandardNormal.sample(&mut rng);
                score + spec.noise * z
            }
        };
        rows.push(row);
        targets.push(y);
    }
    Ok(Dataset { name: spec.name.clone(), schema, rows, targets })
}
