//! Schema-driven CSV ingestion and stratified splitting.
//!
//! Tables are loaded against an explicit [`FeatureSchema`] sidecar (JSON).
//! Categorical codes are replaced by their display text at load time, so
//! everything downstream only ever sees meaningful words.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Text used for missing categorical / string cells.
pub const MISSING_TEXT: &str = "unknown";

#[derive(Debug, Error)]
pub enum TableError {
    #[error("column `{0}` declared in schema is missing from the CSV header")]
    MissingColumn(String),
    #[error("target column is missing from the CSV header")]
    TargetMissing,
    #[error("file contains no data rows")]
    EmptyFile,
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("categorical column `{column}` has unmapped value `{value}`")]
    UnmappedCategory { column: String, value: String },
    #[error("row {row}: unusable target value `{value}`")]
    BadTarget { row: usize, value: String },
    #[error("split needs at least {needed} rows, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("class {class} has {count} rows; stratified split needs at least 3")]
    ClassTooSmall { class: u8, count: usize },
    #[error("invalid split ratios: {0}")]
    InvalidSplit(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Numerical,
    Categorical,
    String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Binclass,
    Regression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Column {
    pub name: String,
    pub kind: ColumnKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category_map: Option<BTreeMap<String, String>>,
}

impl Column {
    pub fn numerical(name: impl Into<String>) -> Self {
        Column { name: name.into(), kind: ColumnKind::Numerical, category_map: None }
    }

    pub fn categorical<K: Into<String>, V: Into<String>>(
        name: impl Into<String>,
        map: impl IntoIterator<Item = (K, V)>,
    ) -> Self {
        Column {
            name: name.into(),
            kind: ColumnKind::Categorical,
            category_map: Some(map.into_iter().map(|(k, v)| (k.into(), v.into())).collect()),
        }
    }

    pub fn string(name: impl Into<String>) -> Self {
        Column { name: name.into(), kind: ColumnKind::String, category_map: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Target {
    pub name: String,
    pub task: Task,
}

/// Feature columns plus the single target column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub columns: Vec<Column>,
    pub target: Target,
}

impl FeatureSchema {
    pub fn new(columns: Vec<Column>, target: Target) -> Result<Self, TableError> {
        let schema = FeatureSchema { columns, target };
        schema.validate()?;
        Ok(schema)
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self, TableError> {
        let mut text = String::new();
        File::open(path)?.read_to_string(&mut text)?;
        let schema: FeatureSchema = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn to_json_file(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), TableError> {
        if self.columns.is_empty() {
            return Err(TableError::InvalidSchema("no feature columns".into()));
        }
        if self.target.name.trim().is_empty() {
            return Err(TableError::InvalidSchema("empty target name".into()));
        }
        let mut seen = HashSet::new();
        for col in &self.columns {
            if col.name.trim().is_empty() {
                return Err(TableError::InvalidSchema("empty column name".into()));
            }
            if !seen.insert(col.name.as_str()) {
                return Err(TableError::InvalidSchema(format!("duplicate column `{}`", col.name)));
            }
            if col.name == self.target.name {
                return Err(TableError::InvalidSchema(format!(
                    "target `{}` also listed as a feature",
                    col.name
                )));
            }
            if col.kind == ColumnKind::Categorical && col.category_map.is_none() {
                return Err(TableError::InvalidSchema(format!(
                    "categorical column `{}` needs a category_map",
                    col.name
                )));
            }
        }
        Ok(())
    }

    pub fn count_kind(&self, kind: ColumnKind) -> usize {
        self.columns.iter().filter(|c| c.kind == kind).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Text(String),
    Missing,
}

/// A loaded table: one cell per feature column per row, plus the target.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    pub schema: FeatureSchema,
    pub rows: Vec<Vec<Cell>>,
    pub targets: Vec<f64>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn task(&self) -> Task {
        self.schema.target.task
    }

    pub fn positives(&self) -> usize {
        self.targets.iter().filter(|&&y| y > 0.5).count()
    }

    /// New dataset containing the given rows, in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            name: self.name.clone(),
            schema: self.schema.clone(),
            rows: indices.iter().map(|&i| self.rows[i].clone()).collect(),
            targets: indices.iter().map(|&i| self.targets[i]).collect(),
        }
    }

    /// Writes the table as CSV (features then target). Text cells are the
    /// display texts, which `load_csv` accepts back as-is.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<(), TableError> {
        let file = File::create(path)?;
        self.write_csv_to(file)
    }

    pub fn write_csv_to<W: Write>(&self, writer: W) -> Result<(), TableError> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        header.push(&self.schema.target.name);
        w.write_record(&header)?;
        for (row, y) in self.rows.iter().zip(&self.targets) {
            let mut record: Vec<String> = row
                .iter()
                .map(|c| match c {
                    Cell::Num(v) => format!("{v}"),
                    Cell::Text(t) => t.clone(),
                    Cell::Missing => String::new(),
                })
                .collect();
            record.push(format!("{y}"));
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset, TableError> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".to_string());
    let file = File::open(path)?;
    load_csv_from(file, schema, &name)
}

pub fn load_csv_from<R: Read>(
    reader: R,
    schema: &FeatureSchema,
    name: &str,
) -> Result<Dataset, TableError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let header: Vec<String> = match rdr.headers() {
        Ok(h) => h.iter().map(|s| s.trim().to_string()).collect(),
        Err(_) => return Err(TableError::EmptyFile),
    };
    if header.iter().all(|h| h.is_empty()) {
        return Err(TableError::EmptyFile);
    }
    let position: HashMap<&str, usize> =
        header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let target_pos =
        *position.get(schema.target.name.as_str()).ok_or(TableError::TargetMissing)?;
    let mut col_pos = Vec::with_capacity(schema.columns.len());
    for col in &schema.columns {
        let p = position
            .get(col.name.as_str())
            .ok_or_else(|| TableError::MissingColumn(col.name.clone()))?;
        col_pos.push(*p);
    }

    let mut rows = Vec::new();
    let mut targets = Vec::new();
    for (row_idx, record) in rdr.records().enumerate() {
        let record = record?;
        let mut cells = Vec::with_capacity(schema.columns.len());
        for (col, &p) in schema.columns.iter().zip(&col_pos) {
            let raw = record.get(p).unwrap_or("").trim();
            cells.push(coerce_cell(col, raw)?);
        }
        let raw_y = record.get(target_pos).unwrap_or("").trim();
        targets.push(parse_target(schema.target.task, raw_y, row_idx)?);
        rows.push(cells);
    }
    if rows.is_empty() {
        return Err(TableError::EmptyFile);
    }
    Ok(Dataset { name: name.to_string(), schema: schema.clone(), rows, targets })
}

fn coerce_cell(col: &Column, raw: &str) -> Result<Cell, TableError> {
    match col.kind {
        ColumnKind::Numerical => Ok(match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Cell::Num(v),
            _ => Cell::Missing,
        }),
        ColumnKind::Categorical => {
            if raw.is_empty() {
                return Ok(Cell::Text(MISSING_TEXT.to_string()));
            }
            let map = col.category_map.as_ref().expect("validated schema");
            if let Some(text) = map.get(raw) {
                return Ok(Cell::Text(text.clone()));
            }
            // already-mapped display text (e.g. a table written by `write_csv`)
            if raw == MISSING_TEXT || map.values().any(|v| v == raw) {
                return Ok(Cell::Text(raw.to_string()));
            }
            Err(TableError::UnmappedCategory { column: col.name.clone(), value: raw.to_string() })
        }
        ColumnKind::String => Ok(Cell::Text(if raw.is_empty() {
            MISSING_TEXT.to_string()
        } else {
            raw.to_string()
        })),
    }
}

fn parse_target(task: Task, raw: &str, row: usize) -> Result<f64, TableError> {
    let bad = || TableError::BadTarget { row, value: raw.to_string() };
    match task {
        Task::Binclass => match raw.to_ascii_lowercase().as_str() {
            "1" | "1.0" | "true" | "yes" => Ok(1.0),
            "0" | "0.0" | "false" | "no" => Ok(0.0),
            _ => Err(bad()),
        },
        Task::Regression => match raw.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(bad()),
        },
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub ratios: (f64, f64, f64),
    pub stratify: bool,
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec { ratios: (0.64, 0.16, 0.20), stratify: true, seed: 0 }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<(), TableError> {
        let (a, b, c) = self.ratios;
        for r in [a, b, c] {
            if !(r > 0.0 && r < 1.0) {
                return Err(TableError::InvalidSplit(format!("fraction {r} outside (0,1)")));
            }
        }
        if ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(TableError::InvalidSplit("fractions must sum to 1".into()));
        }
        if a < b || a < c {
            return Err(TableError::InvalidSplit("train fraction must be the largest".into()));
        }
        Ok(())
    }
}

/// Integer allocation of `total` proportional to `weights`, largest remainder
/// first, ties to the earliest slot.
pub(crate) fn largest_remainder(total: usize, weights: &[f64]) -> Vec<usize> {
    let sum: f64 = weights.iter().sum();
    let quotas: Vec<f64> = weights.iter().map(|w| total as f64 * w / sum).collect();
    let mut alloc: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let assigned: usize = alloc.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&i, &j| {
        let ri = quotas[i] - quotas[i].floor();
        let rj = quotas[j] - quotas[j].floor();
        rj.partial_cmp(&ri).unwrap().then(i.cmp(&j))
    });
    for &i in order.iter().take(total.saturating_sub(assigned)) {
        alloc[i] += 1;
    }
    alloc
}

/// Assigns each row index to one of `weights.len()` parts.
fn partition_indices(
    ds: &Dataset,
    weights: &[f64],
    stratify: bool,
    seed: u64,
) -> Vec<Vec<usize>> {
    let n = ds.len();
    let sizes = largest_remainder(n, weights);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut parts: Vec<Vec<usize>> = vec![Vec::new(); weights.len()];
    if stratify && ds.task() == Task::Binclass {
        let mut pos: Vec<usize> = (0..n).filter(|&i| ds.targets[i] > 0.5).collect();
        let mut neg: Vec<usize> = (0..n).filter(|&i| ds.targets[i] <= 0.5).collect();
        pos.shuffle(&mut rng);
        neg.shuffle(&mut rng);
        let pos_alloc = largest_remainder(pos.len(), &sizes.iter().map(|&s| s as f64).collect::<Vec<_>>());
        let (mut p, mut q) = (0, 0);
        for (j, part) in parts.iter_mut().enumerate() {
            let take_pos = pos_alloc[j].min(sizes[j]);
            let take_neg = sizes[j] - take_pos;
            part.extend_from_slice(&pos[p..p + take_pos]);
            part.extend_from_slice(&neg[q..q + take_neg]);
            p += take_pos;
            q += take_neg;
        }
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        let mut start = 0;
        for (j, part) in parts.iter_mut().enumerate() {
            part.extend_from_slice(&all[start..start + sizes[j]]);
            start += sizes[j];
        }
    }
    for part in &mut parts {
        part.sort_unstable();
    }
    parts
}

fn check_classes(ds: &Dataset) -> Result<(), TableError> {
    let pos = ds.positives();
    let neg = ds.len() - pos;
    if pos < 3 {
        return Err(TableError::ClassTooSmall { class: 1, count: pos });
    }
    if neg < 3 {
        return Err(TableError::ClassTooSmall { class: 0, count: neg });
    }
    Ok(())
}

/// Train/validation/test partition; returns the row indices of each part.
pub fn split_indices(ds: &Dataset, spec: &SplitSpec) -> Result<[Vec<usize>; 3], TableError> {
    spec.validate()?;
    if ds.len() < 10 {
        return Err(TableError::TooFewRows { needed: 10, got: ds.len() });
    }
    let stratify = spec.stratify && ds.task() == Task::Binclass;
    if stratify {
        check_classes(ds)?;
    }
    let (a, b, c) = spec.ratios;
    let mut parts = partition_indices(ds, &[a, b, c], stratify, spec.seed).into_iter();
    Ok([parts.next().unwrap(), parts.next().unwrap(), parts.next().unwrap()])
}

pub fn split(ds: &Dataset, spec: &SplitSpec) -> Result<(Dataset, Dataset, Dataset), TableError> {
    let [tr, va, te] = split_indices(ds, spec)?;
    Ok((ds.subset(&tr), ds.subset(&va), ds.subset(&te)))
}

/// Holds out `round(frac * N)` rows as a validation set, stratified on
/// binary targets.
pub fn validation_carveout(
    train: &Dataset,
    frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), TableError> {
    if !(frac > 0.0 && frac <= 0.5) {
        return Err(TableError::InvalidSplit(format!("validation fraction {frac} outside (0, 0.5]")));
    }
    let n = train.len();
    let n_val = (frac * n as f64).round() as usize;
    if n_val == 0 || n_val >= n {
        return Err(TableError::TooFewRows { needed: (0.5 / frac).ceil() as usize, got: n });
    }
    let stratify = train.task() == Task::Binclass;
    if stratify {
        let pos = train.positives();
        if pos == 0 || pos == n {
            return Err(TableError::ClassTooSmall { class: u8::from(pos == 0), count: 0 });
        }
    }
    let weights = [(n - n_val) as f64, n_val as f64];
    let parts = partition_indices(train, &weights, stratify, seed);
    Ok((train.subset(&parts[0]), train.subset(&parts[1])))
}
