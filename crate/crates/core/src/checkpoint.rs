//! Self-contained model checkpoints: a directory holding `manifest.json`
//! and `tensors.bin`.
//!
//! `tensors.bin` layout, all integers little-endian:
//! magic `TTOK`, u32 format version, u32 tensor count, then per tensor
//! u32 name length, UTF-8 name, u8 dtype (0 = f32), u32 ndim, u64 dims,
//! f32 data in row-major order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::graph::ParamStore;
use crate::model::{ModelConfig, ModelError, TabModel};
use crate::preprocess::TablePreprocessor;
use crate::table::Task;
use crate::tensor::Matrix;
use crate::vocab::{VocabError, VocabFile, Vocabulary};

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8; 4] = b"TTOK";
const MANIFEST: &str = "manifest.json";
const TENSORS: &str = "tensors.bin";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint version {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
}

/// What a prediction head was trained on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadInfo {
    pub dataset: String,
    pub task: Task,
    pub preprocessor: TablePreprocessor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: TabModel,
    pub heads: Vec<HeadInfo>,
    pub step: u64,
    pub epoch: u64,
    pub best_val_loss: Option<f64>,
    /// snapshot of the run configuration that produced the model
    pub run_config: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    format: String,
    version: u32,
    model_config: ModelConfig,
    vocab: VocabFile,
    heads: Vec<HeadInfo>,
    n_prediction_heads: usize,
    step: u64,
    epoch: u64,
    best_val_loss: Option<f64>,
    run_config: serde_json::Value,
    tensors_file: String,
    tensors_sha256: String,
    tensor_count: usize,
}

/// Rounds every parameter to f32 precision, the stored dtype.
pub fn snap_to_f32(store: &mut ParamStore) {
    for id in store.ids().collect::<Vec<_>>() {
        for x in &mut store.get_mut(id).data {
            *x = f64::from(*x as f32);
        }
    }
}

impl Checkpoint {
    /// Captures a model. Parameters are rounded to f32 so that the
    /// in-memory checkpoint equals what a save/load cycle yields.
    pub fn from_model(model: &TabModel, heads: Vec<HeadInfo>, step: u64, epoch: u64, best_val_loss: Option<f64>, run_config: serde_json::Value) -> Self {
        let mut model = model.clone();
        snap_to_f32(&mut model.params);
        Checkpoint { model, heads, step, epoch, best_val_loss, run_config }
    }
}

pub fn encode_tensors(store: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(12 + store.numel() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    out.extend_from_slice(&(store.len() as u32).to_le_bytes());
    for (name, m) in store.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(0u8);
        out.extend_from_slice(&2u32.to_le_bytes());
        out.extend_from_slice(&(m.rows as u64).to_le_bytes());
        out.extend_from_slice(&(m.cols as u64).to_le_bytes());
        for &x in &m.data {
            out.extend_from_slice(&(x as f32).to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        if self.pos + n > self.buf.len() {
            return Err(CheckpointError::CorruptFile("tensor file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_tensors(buf: &[u8]) -> Result<ParamStore, CheckpointError> {
    let mut r = Reader { buf, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(CheckpointError::CorruptFile("bad magic".into()));
    }
    let version = r.u32()?;
    if version != FORMAT_VERSION {
        return Err(CheckpointError::VersionMismatch { found: version, expected: FORMAT_VERSION });
    }
    let count = r.u32()? as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = std::str::from_utf8(r.take(len)?)
            .map_err(|_| CheckpointError::CorruptFile("tensor name not UTF-8".into()))?
            .to_string();
        let dtype = r.take(1)?[0];
        if dtype != 0 {
            return Err(CheckpointError::CorruptFile(format!("unsupported dtype {dtype} for `{name}`")));
        }
        let ndim = r.u32()? as usize;
        let dims: Vec<usize> = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<_, _>>()?;
        let (rows, cols) = match dims.as_slice() {
            [n] => (1, *n),
            [a, b] => (*a, *b),
            _ => return Err(CheckpointError::CorruptFile(format!("`{name}` has {ndim} dims"))),
        };
        let bytes = r.take(rows * cols * 4)?;
        let data = bytes.chunks_exact(4).map(|c| f64::from(f32::from_le_bytes(c.try_into().expect("4 bytes")))).collect();
        if store.id(&name).is_some() {
            return Err(CheckpointError::CorruptFile(format!("duplicate tensor `{name}`")));
        }
        store.add(name, Matrix::from_vec(rows, cols, data));
    }
    if r.pos != buf.len() {
        return Err(CheckpointError::CorruptFile("trailing bytes in tensor file".into()));
    }
    Ok(store)
}

pub fn save_checkpoint(ckpt: &Checkpoint, dir: impl AsRef<Path>) -> Result<(), CheckpointError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let tensors = encode_tensors(&ckpt.model.params);
    let manifest = Manifest {
        format: "tabtok-checkpoint".into(),
        version: FORMAT_VERSION,
        model_config: ckpt.model.config,
        vocab: ckpt.model.vocab.to_file(),
        heads: ckpt.heads.clone(),
        n_prediction_heads: ckpt.model.heads.len(),
        step: ckpt.step,
        epoch: ckpt.epoch,
        best_val_loss: ckpt.best_val_loss,
        run_config: ckpt.run_config.clone(),
        tensors_file: TENSORS.into(),
        tensors_sha256: hex::encode(Sha256::digest(&tensors)),
        tensor_count: ckpt.model.params.len(),
    };
    fs::write(dir.join(TENSORS), &tensors)?;
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    fs::write(dir.join(MANIFEST), json)?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    let dir = dir.as_ref();
    let text = fs::read_to_string(dir.join(MANIFEST))?;
    let raw: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CheckpointError::CorruptFile(format!("manifest: {e}")))?;
    let version = raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| CheckpointError::CorruptFile("manifest has no version".into()))?;
    if version != u64::from(FORMAT_VERSION) {
        return Err(CheckpointError::VersionMismatch { found: version as u32, expected: FORMAT_VERSION });
    }
    let manifest: Manifest = serde_json::from_value(raw).map_err(|e| CheckpointError::CorruptFile(format!("manifest: {e}")))?;
    let tensors = fs::read(dir.join(&manifest.tensors_file))?;
    if hex::encode(Sha256::digest(&tensors)) != manifest.tensors_sha256 {
        return Err(CheckpointError::CorruptFile("tensor checksum mismatch".into()));
    }
    let store = decode_tensors(&tensors)?;
    if store.len() != manifest.tensor_count {
        return Err(CheckpointError::CorruptFile("tensor count mismatch".into()));
    }
    let vocab = Vocabulary::from_file(manifest.vocab)?;
    let model = TabModel::from_store(manifest.model_config, vocab, store, manifest.n_prediction_heads)?;
    Ok(Checkpoint {
        model,
        heads: manifest.heads,
        step: manifest.step,
        epoch: manifest.epoch,
        best_val_loss: manifest.best_val_loss,
        run_config: manifest.run_config,
    })
}
