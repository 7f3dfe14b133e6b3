//! Order-agnostic transformer encoder, prediction heads and losses.

use rand::Rng;
use thiserror::Error;

use crate::graph::{Graph, ParamId, ParamStore, RowTerm, TripletRows, Var};
use crate::table::Task;
use crate::tensor::Matrix;

#[derive(Debug, Error, PartialEq)]
pub enum BackboneError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("prediction and label lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("triplet sampling needs n_bin >= 3, got {0}")]
    TooFewBins(usize),
}

/// One pre-norm block: `x + MHSA(LN(x))`, then `x + FFN(LN(x))` with GELU.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<EncoderLayer>,
    pub n_heads: usize,
}

fn linear_init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Matrix {
    Matrix::randn(fan_in, fan_out, 1.0 / (fan_in as f64).sqrt(), rng)
}

impl EncoderParams {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, n_layers: usize, d: usize, d_ff: usize, n_heads: usize, rng: &mut R) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        for l in 0..n_layers {
            let mut add = |name: &str, m: Matrix| store.add(format!("{prefix}.{l}.{name}"), m);
            let ln1_g = add("ln1.g", Matrix::filled(1, d, 1.0));
            let ln1_b = add("ln1.b", Matrix::zeros(1, d));
            let wq = add("attn.wq", linear_init(d, d, rng));
            let bq = add("attn.bq", Matrix::zeros(1, d));
            let wk = add("attn.wk", linear_init(d, d, rng));
            let bk = add("attn.bk", Matrix::zeros(1, d));
            let wv = add("attn.wv", linear_init(d, d, rng));
            let bv = add("attn.bv", Matrix::zeros(1, d));
            let wo = add("attn.wo", linear_init(d, d, rng));
            let bo = add("attn.bo", Matrix::zeros(1, d));
            let ln2_g = add("ln2.g", Matrix::filled(1, d, 1.0));
            let ln2_b = add("ln2.b", Matrix::zeros(1, d));
            let w1 = add("ffn.w1", linear_init(d, d_ff, rng));
            let b1 = add("ffn.b1", Matrix::zeros(1, d_ff));
            let w2 = add("ffn.w2", linear_init(d_ff, d, rng));
            let b2 = add("ffn.b2", Matrix::zeros(1, d));
            layers.push(EncoderLayer { ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2 });
        }
        EncoderParams { layers, n_heads }
    }
}

/// Runs the encoder over stacked samples (`spans` gives each sample's rows)
/// and returns the CLS output row of every sample.
pub(crate) fn encode_rows(g: &mut Graph<'_>, x: Var, spans: &[(usize, usize)], params: &EncoderParams) -> Var {
    let mut h = x;
    for layer in &params.layers {
        let (g1, b1) = (g.param(layer.ln1_g), g.param(layer.ln1_b));
        let n1 = g.layer_norm(h, g1, b1);
        let (wq, bq) = (g.param(layer.wq), g.param(layer.bq));
        let (wk, bk) = (g.param(layer.wk), g.param(layer.bk));
        let (wv, bv) = (g.param(layer.wv), g.param(layer.bv));
        let q = g.linear(n1, wq, bq);
        let k = g.linear(n1, wk, bk);
        let v = g.linear(n1, wv, bv);
        let att = g.segment_attention(q, k, v, spans.to_vec(), params.n_heads);
        let (wo, bo) = (g.param(layer.wo), g.param(layer.bo));
        let proj = g.linear(att, wo, bo);
        h = g.add(h, proj);
        let (g2, b2) = (g.param(layer.ln2_g), g.param(layer.ln2_b));
        let n2 = g.layer_norm(h, g2, b2);
        let (w1, fb1) = (g.param(layer.w1), g.param(layer.b1));
        let (w2, fb2) = (g.param(layer.w2), g.param(layer.b2));
        let up = g.linear(n2, w1, fb1);
        let act = g.gelu(up);
        let down = g.linear(act, w2, fb2);
        h = g.add(h, down);
    }
    let terms = spans
        .iter()
        .enumerate()
        .map(|(i, &(start, _))| RowTerm { out_row: i, src: 0, src_row: start, weight: 1.0 })
        .collect();
    g.row_combine(vec![h], spans.len(), terms)
}

/// CLS output for a single fused sample (`(1 + n) x d`).
pub fn encode(x: &Matrix, store: &ParamStore, params: &EncoderParams) -> Result<Vec<f64>, BackboneError> {
    if x.rows < 2 {
        return Err(BackboneError::ShapeMismatch(format!("need at least 2 rows, got {}", x.rows)));
    }
    if let Some(l) = params.layers.first() {
        let d = store.get(l.wq).rows;
        if x.cols != d || !d.is_multiple_of(params.n_heads) {
            return Err(BackboneError::ShapeMismatch(format!("input width {} vs model width {d}", x.cols)));
        }
    }
    let mut g = Graph::new(store);
    let xv = g.constant(x.clone());
    let out = encode_rows(&mut g, xv, &[(0, x.rows)], params);
    Ok(g.value(out).row(0).to_vec())
}

/// `Dropout(Linear_1(Tanh(Linear_2(x))))` with a scalar output.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub w2: ParamId,
    pub b2: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub dropout: f64,
}

impl PredictionHead {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, dropout: f64, rng: &mut R) -> Self {
        PredictionHead {
            w2: store.add(format!("{prefix}.linear2.w"), linear_init(d, d, rng)),
            b2: store.add(format!("{prefix}.linear2.b"), Matrix::zeros(1, d)),
            w1: store.add(format!("{prefix}.linear1.w"), linear_init(d, 1, rng)),
            b1: store.add(format!("{prefix}.linear1.b"), Matrix::zeros(1, 1)),
            dropout,
        }
    }
}

/// Applies a head to `B x d` CLS rows. With an rng the dropout is active.
pub(crate) fn head_rows<R: Rng + ?Sized>(g: &mut Graph<'_>, cls: Var, head: &PredictionHead, rng: Option<&mut R>) -> Var {
    let (w2, b2) = (g.param(head.w2), g.param(head.b2));
    let (w1, b1) = (g.param(head.w1), g.param(head.b1));
    let h = g.linear(cls, w2, b2);
    let t = g.tanh(h);
    let out = g.linear(t, w1, b1);
    match rng {
        Some(rng) if head.dropout > 0.0 => {
            let keep = 1.0 - head.dropout;
            let n = g.value(out).data.len();
            let mask = (0..n).map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 }).collect();
            g.mul_const(out, mask)
        }
        _ => out,
    }
}

pub fn predict<R: Rng + ?Sized>(cls: &[f64], store: &ParamStore, head: &PredictionHead, rng: Option<&mut R>) -> f64 {
    let mut g = Graph::new(store);
    let x = g.constant(Matrix::from_vec(1, cls.len(), cls.to_vec()));
    let out = head_rows(&mut g, x, head, rng);
    g.value(out).data[0]
}

pub(crate) fn supervised_node(g: &mut Graph<'_>, pred: Var, y: &[f64], task: Task) -> Var {
    match task {
        Task::Binclass => g.bce_with_logits(pred, y.to_vec()),
        Task::Regression => g.mse(pred, y.to_vec()),
    }
}

/// Mean BCE on `sigmoid(pred)` for binclass, mean squared error for regression.
pub fn supervised_loss(pred: &[f64], y: &[f64], task: Task) -> Result<f64, BackboneError> {
    if pred.len() != y.len() {
        return Err(BackboneError::LengthMismatch(pred.len(), y.len()));
    }
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let p = g.constant(Matrix::from_vec(pred.len(), 1, pred.to_vec()));
    let l = supervised_node(&mut g, p, y, task);
    Ok(g.value(l).data[0])
}

pub fn total_loss(sup: f64, reg: f64, lambda: f64) -> f64 {
    sup + lambda * reg
}

/// `f(k) = LayerNorm(Linear(E_k))`, only used by the magnitude regularizer.
#[derive(Debug, Clone, PartialEq)]
pub struct RegHead {
    pub w: ParamId,
    pub b: ParamId,
    pub ln_g: ParamId,
    pub ln_b: ParamId,
}

impl RegHead {
    pub fn init<R: Rng + ?Sized>(store: &mut ParamStore, prefix: &str, d: usize, rng: &mut R) -> Self {
        RegHead {
            w: store.add(format!("{prefix}.linear.w"), linear_init(d, d, rng)),
            b: store.add(format!("{prefix}.linear.b"), Matrix::zeros(1, d)),
            ln_g: store.add(format!("{prefix}.ln.g"), Matrix::filled(1, d, 1.0)),
            ln_b: store.add(format!("{prefix}.ln.b"), Matrix::zeros(1, d)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub k1: usize,
    pub k2: usize,
    pub k3: usize,
}

impl Triplet {
    /// `(|k1 - k3| - |k1 - k2|) / n_bin`
    pub fn margin(&self, n_bin: usize) -> f64 {
        (self.k1.abs_diff(self.k3) as f64 - self.k1.abs_diff(self.k2) as f64) / n_bin as f64
    }
}

/// Uniform sampler of bin triplets with `|k1 - k2| < |k1 - k3|`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletSampler {
    pub triplets_per_step: usize,
}

impl Default for TripletSampler {
    fn default() -> Self {
        TripletSampler { triplets_per_step: 32 }
    }
}

impl TripletSampler {
    pub fn sample<R: Rng + ?Sized>(&self, n_bin: usize, rng: &mut R) -> Result<Vec<Triplet>, BackboneError> {
        if n_bin < 3 {
            return Err(BackboneError::TooFewBins(n_bin));
        }
        let mut out = Vec::with_capacity(self.triplets_per_step);
        while out.len() < self.triplets_per_step {
            let k1 = rng.random_range(0..n_bin);
            let a = rng.random_range(0..n_bin);
            let b = rng.random_range(0..n_bin);
            if a == k1 || b == k1 || a == b {
                continue;
            }
            let (da, db) = (k1.abs_diff(a), k1.abs_diff(b));
            match da.cmp(&db) {
                std::cmp::Ordering::Less => out.push(Triplet { k1, k2: a, k3: b }),
                std::cmp::Ordering::Greater => out.push(Triplet { k1, k2: b, k3: a }),
                std::cmp::Ordering::Equal => {}
            }
        }
        Ok(out)
    }
}

/// `f(k)` rows for the given bins, in order.
pub fn reg_features(g: &mut Graph<'_>, magnitude: ParamId, head: &RegHead, bins: &[usize]) -> Var {
    let table = g.param(magnitude);
    let terms = bins.iter().enumerate().map(|(i, &k)| RowTerm { out_row: i, src: 0, src_row: k, weight: 1.0 }).collect();
    let rows = g.row_combine(vec![table], bins.len(), terms);
    let (w, b) = (g.param(head.w), g.param(head.b));
    let lin = g.linear(rows, w, b);
    let (lg, lb) = (g.param(head.ln_g), g.param(head.ln_b));
    g.layer_norm(lin, lg, lb)
}

pub fn triplet_node(g: &mut Graph<'_>, magnitude: ParamId, head: &RegHead, triplets: &[Triplet], n_bin: usize) -> Var {
    let mut bins: Vec<usize> = triplets.iter().flat_map(|t| [t.k1, t.k2, t.k3]).collect();
    bins.sort_unstable();
    bins.dedup();
    let slot = |k: usize| bins.binary_search(&k).expect("bin present");
    let rows: Vec<TripletRows> = triplets
        .iter()
        .map(|t| TripletRows { anchor: slot(t.k1), near: slot(t.k2), far: slot(t.k3), margin: t.margin(n_bin) })
        .collect();
    let f = reg_features(g, magnitude, head, &bins);
    g.triplet_hinge(f, rows)
}

/// Mean magnitude-aware triplet hinge over freshly sampled triplets.
pub fn triplet_reg_loss<R: Rng + ?Sized>(
    store: &ParamStore,
    magnitude: ParamId,
    head: &RegHead,
    sampler: &TripletSampler,
    rng: &mut R,
) -> Result<f64, BackboneError> {
    let n_bin = store.get(magnitude).rows - 1;
    let triplets = sampler.sample(n_bin, rng)?;
    let mut g = Graph::new(store);
    let l = triplet_node(&mut g, magnitude, head, &triplets, n_bin);
    Ok(g.value(l).data[0])
}

/// Single hinge term `max(d12 - d13 + m, 0)`.
pub fn triplet_term(d12: f64, d13: f64, t: &Triplet, n_bin: usize) -> f64 {
    (d12 - d13 + t.margin(n_bin)).max(0.0)
}
