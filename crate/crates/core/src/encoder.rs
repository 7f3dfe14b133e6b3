//! Token embedding and intra-feature attention.
//!
//! Each feature becomes a short token run `[CLS] name... value...`. Name
//! tokens carry position ids `1..=l1`; the CLS slot and every value token sit
//! at position 0. One shared multi-head attention block fuses the run and its
//! CLS output row becomes the feature vector. Position embeddings enter the
//! queries and keys only, never the values (unless the `valpos` ablation is on).

use thiserror::Error;

use crate::graph::{Graph, ParamId, ParamStore, RowTerm, Var};
use crate::tensor::Matrix;
use crate::vocab::TokenSequence;

#[derive(Debug, Error, PartialEq)]
pub enum EncodeError {
    #[error("token id {id} outside table `{table}` with {rows} rows")]
    IdOutOfBounds { table: &'static str, id: usize, rows: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("a sample needs at least one feature")]
    NoFeatures,
}

/// Handles into the parameter store for the embedding tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingTables {
    pub word: ParamId,
    pub magnitude: ParamId,
    pub cls: ParamId,
    pub position: ParamId,
}

impl EmbeddingTables {
    pub fn dim(&self, store: &ParamStore) -> usize {
        store.get(self.cls).cols
    }

    /// Number of real magnitude bins (the table has one extra missing row).
    pub fn n_bin(&self, store: &ParamStore) -> usize {
        store.get(self.magnitude).rows - 1
    }

    pub fn max_name_len(&self, store: &ParamStore) -> usize {
        store.get(self.position).rows - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IfaParams {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub n_heads: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureValue {
    /// numerical value: bin index and multiplier in [0.5, 1.5]
    Magnitude { bin: usize, multiplier: f64 },
    /// numerical value absent; uses the reserved missing row
    Missing,
    /// categorical/string value, or a number written out as text
    Text(TokenSequence),
    /// value-multiplied mean of the feature-name embeddings
    NameScaled { multiplier: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTokens {
    pub name: TokenSequence,
    pub value: FeatureValue,
}

impl FeatureTokens {
    pub fn value_len(&self) -> usize {
        match &self.value {
            FeatureValue::Text(t) => t.len(),
            _ => 1,
        }
    }
}

/// A row of one embedded token: weighted rows of the word, magnitude or CLS
/// tables.
#[derive(Debug, Clone)]
pub(crate) enum TokenRow {
    Cls,
    Word(usize),
    Magnitude(usize, f64),
    WordMean(Vec<usize>, f64),
}

#[derive(Debug, Clone)]
pub(crate) struct TokenSlot {
    pub row: TokenRow,
    pub position: usize,
}

/// Token slots of one feature (no CLS), names truncated to `max_name_len`.
pub(crate) fn feature_slots(ft: &FeatureTokens, n_bin: usize, max_name_len: usize) -> Vec<TokenSlot> {
    let names: Vec<usize> = ft.name.ids.iter().take(max_name_len).map(|&i| i as usize).collect();
    let mut slots: Vec<TokenSlot> = names
        .iter()
        .enumerate()
        .map(|(p, &id)| TokenSlot { row: TokenRow::Word(id), position: p + 1 })
        .collect();
    match &ft.value {
        FeatureValue::Magnitude { bin, multiplier } => {
            slots.push(TokenSlot { row: TokenRow::Magnitude(*bin, *multiplier), position: 0 })
        }
        FeatureValue::Missing => slots.push(TokenSlot { row: TokenRow::Magnitude(n_bin, 1.0), position: 0 }),
        FeatureValue::Text(t) => {
            slots.extend(t.ids.iter().map(|&id| TokenSlot { row: TokenRow::Word(id as usize), position: 0 }))
        }
        FeatureValue::NameScaled { multiplier } => {
            slots.push(TokenSlot { row: TokenRow::WordMean(names.clone(), *multiplier), position: 0 })
        }
    }
    slots
}

pub(crate) fn check_slots(slots: &[TokenSlot], store: &ParamStore, tables: &EmbeddingTables) -> Result<(), EncodeError> {
    let words = store.get(tables.word).rows;
    let mags = store.get(tables.magnitude).rows;
    let out = |table, id, rows| EncodeError::IdOutOfBounds { table, id, rows };
    for s in slots {
        match &s.row {
            TokenRow::Cls => {}
            TokenRow::Word(id) if *id >= words => return Err(out("word", *id, words)),
            TokenRow::WordMean(ids, _) => {
                if let Some(&id) = ids.iter().find(|&&id| id >= words) {
                    return Err(out("word", id, words));
                }
            }
            TokenRow::Magnitude(k, _) if *k >= mags => return Err(out("magnitude", *k, mags)),
            _ => {}
        }
    }
    Ok(())
}

/// Embedded token rows `H` and position rows `P` for a list of segments.
pub(crate) fn embed_segments(g: &mut Graph<'_>, tables: &EmbeddingTables, segments: &[Vec<TokenSlot>]) -> (Var, Var, Vec<(usize, usize)>) {
    let srcs = vec![g.param(tables.cls), g.param(tables.word), g.param(tables.magnitude)];
    let mut terms = Vec::new();
    let mut pos_terms = Vec::new();
    let mut spans = Vec::with_capacity(segments.len());
    let mut row = 0;
    for seg in segments {
        spans.push((row, seg.len()));
        for slot in seg {
            match &slot.row {
                TokenRow::Cls => terms.push(RowTerm { out_row: row, src: 0, src_row: 0, weight: 1.0 }),
                TokenRow::Word(id) => terms.push(RowTerm { out_row: row, src: 1, src_row: *id, weight: 1.0 }),
                TokenRow::Magnitude(k, m) => terms.push(RowTerm { out_row: row, src: 2, src_row: *k, weight: *m }),
                TokenRow::WordMean(ids, m) => {
                    let w = m / ids.len().max(1) as f64;
                    terms.extend(ids.iter().map(|&id| RowTerm { out_row: row, src: 1, src_row: id, weight: w }));
                }
            }
            pos_terms.push(RowTerm { out_row: row, src: 0, src_row: slot.position, weight: 1.0 });
            row += 1;
        }
    }
    let h = g.row_combine(srcs, row, terms);
    let pos = g.param(tables.position);
    let p = g.row_combine(vec![pos], row, pos_terms);
    (h, p, spans)
}

/// Shared attention over `[CLS; tokens]` segments; returns the output rows
/// at each segment's CLS index, one per segment.
pub(crate) fn ifa_attend(
    g: &mut Graph<'_>,
    h: Var,
    p: Var,
    spans: &[(usize, usize)],
    params: &IfaParams,
    value_position_encoding: bool,
) -> Var {
    let hp = g.add(h, p);
    let wq = g.param(params.wq);
    let wk = g.param(params.wk);
    let wv = g.param(params.wv);
    let wo = g.param(params.wo);
    let q = g.matmul(hp, wq);
    let k = g.matmul(hp, wk);
    let v = if value_position_encoding { g.matmul(hp, wv) } else { g.matmul(h, wv) };
    let att = g.segment_attention(q, k, v, spans.to_vec(), params.n_heads);
    let merged = g.matmul(att, wo);
    let terms = spans
        .iter()
        .enumerate()
        .map(|(i, &(start, _))| RowTerm { out_row: i, src: 0, src_row: start, weight: 1.0 })
        .collect();
    g.row_combine(vec![merged], spans.len(), terms)
}

/// Name and value embeddings of one feature, `(l1 + l2) x d`, with the
/// position id of every row.
pub fn embed_feature(
    ft: &FeatureTokens,
    store: &ParamStore,
    tables: &EmbeddingTables,
) -> Result<(Matrix, Vec<usize>), EncodeError> {
    let slots = feature_slots(ft, tables.n_bin(store), tables.max_name_len(store));
    check_slots(&slots, store, tables)?;
    let positions = slots.iter().map(|s| s.position).collect();
    let mut g = Graph::new(store);
    let (h, _, _) = embed_segments(&mut g, tables, &[slots]);
    Ok((g.value(h).clone(), positions))
}

/// Fuses an embedded feature into one vector read at the CLS position.
pub fn ifa_fuse(
    embedded: &Matrix,
    positions: &[usize],
    store: &ParamStore,
    params: &IfaParams,
    tables: &EmbeddingTables,
    value_position_encoding: bool,
) -> Result<Vec<f64>, EncodeError> {
    let d = tables.dim(store);
    if embedded.cols != d || embedded.rows != positions.len() || embedded.rows == 0 {
        return Err(EncodeError::ShapeMismatch(format!(
            "embedded {}x{} with {} positions, width {d}",
            embedded.rows,
            embedded.cols,
            positions.len()
        )));
    }
    let pos_rows = store.get(tables.position).rows;
    if let Some(&p) = positions.iter().find(|&&p| p >= pos_rows) {
        return Err(EncodeError::IdOutOfBounds { table: "position", id: p, rows: pos_rows });
    }
    if !d.is_multiple_of(params.n_heads) {
        return Err(EncodeError::ShapeMismatch(format!("{} heads do not divide width {d}", params.n_heads)));
    }
    let mut g = Graph::new(store);
    let cls = g.param(tables.cls);
    let e = g.constant(embedded.clone());
    let n = embedded.rows + 1;
    let mut terms = vec![RowTerm { out_row: 0, src: 0, src_row: 0, weight: 1.0 }];
    terms.extend((0..embedded.rows).map(|r| RowTerm { out_row: r + 1, src: 1, src_row: r, weight: 1.0 }));
    let h = g.row_combine(vec![cls, e], n, terms);
    let pos = g.param(tables.position);
    let mut pos_terms = vec![RowTerm { out_row: 0, src: 0, src_row: 0, weight: 1.0 }];
    pos_terms.extend(positions.iter().enumerate().map(|(r, &p)| RowTerm { out_row: r + 1, src: 0, src_row: p, weight: 1.0 }));
    let p = g.row_combine(vec![pos], n, pos_terms);
    let out = ifa_attend(&mut g, h, p, &[(0, n)], params, value_position_encoding);
    Ok(g.value(out).row(0).to_vec())
}

/// Fused sample: `(1 + n) x d`, row 0 the CLS embedding, row `i` the fused
/// vector of feature `i`. No sample-level position information is added.
pub fn fuse_sample(
    features: &[FeatureTokens],
    store: &ParamStore,
    params: &IfaParams,
    tables: &EmbeddingTables,
    value_position_encoding: bool,
) -> Result<Matrix, EncodeError> {
    if features.is_empty() {
        return Err(EncodeError::NoFeatures);
    }
    let mut g = Graph::new(store);
    let x = fuse_rows(&mut g, &[features], store, params, tables, value_position_encoding)?;
    Ok(g.value(x).clone())
}

/// Batched fusion: stacked `(1 + n_b)`-row blocks, one per sample.
pub(crate) fn fuse_rows(
    g: &mut Graph<'_>,
    rows: &[&[FeatureTokens]],
    store: &ParamStore,
    params: &IfaParams,
    tables: &EmbeddingTables,
    value_position_encoding: bool,
) -> Result<Var, EncodeError> {
    let n_bin = tables.n_bin(store);
    let max_name = tables.max_name_len(store);
    let mut segments = Vec::new();
    for row in rows {
        if row.is_empty() {
            return Err(EncodeError::NoFeatures);
        }
        for ft in row.iter() {
            let mut seg = vec![TokenSlot { row: TokenRow::Cls, position: 0 }];
            seg.extend(feature_slots(ft, n_bin, max_name));
            check_slots(&seg, store, tables)?;
            segments.push(seg);
        }
    }
    let (h, p, spans) = embed_segments(g, tables, &segments);
    let fused = ifa_attend(g, h, p, &spans, params, value_position_encoding);
    let cls = g.param(tables.cls);
    let mut terms = Vec::new();
    let mut out_row = 0;
    let mut feat = 0;
    for row in rows {
        terms.push(RowTerm { out_row, src: 0, src_row: 0, weight: 1.0 });
        out_row += 1;
        for _ in row.iter() {
            terms.push(RowTerm { out_row, src: 1, src_row: feat, weight: 1.0 });
            out_row += 1;
            feat += 1;
        }
    }
    Ok(g.row_combine(vec![cls, fused], out_row, terms))
}

/// Without fusion: every sample is one long `[CLS] name value name value ...`
/// sequence with position embeddings added, fed straight to the backbone.
pub(crate) fn flat_rows(
    g: &mut Graph<'_>,
    rows: &[&[FeatureTokens]],
    store: &ParamStore,
    tables: &EmbeddingTables,
) -> Result<Var, EncodeError> {
    let n_bin = tables.n_bin(store);
    let max_name = tables.max_name_len(store);
    let mut segments = Vec::new();
    for row in rows {
        if row.is_empty() {
            return Err(EncodeError::NoFeatures);
        }
        let mut seg = vec![TokenSlot { row: TokenRow::Cls, position: 0 }];
        for ft in row.iter() {
            seg.extend(feature_slots(ft, n_bin, max_name));
        }
        check_slots(&seg, store, tables)?;
        segments.push(seg);
    }
    let (h, p, _) = embed_segments(g, tables, &segments);
    Ok(g.add(h, p))
}

/// Sequence lengths seen by the backbone for each sample.
pub(crate) fn backbone_lengths(rows: &[&[FeatureTokens]], use_ifa: bool, max_name_len: usize) -> Vec<usize> {
    rows.iter()
        .map(|row| {
            if use_ifa {
                1 + row.len()
            } else {
                1 + row.iter().map(|ft| ft.name.len().min(max_name_len) + ft.value_len()).sum::<usize>()
            }
        })
        .collect()
}
