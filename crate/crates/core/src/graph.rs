//! Tape-based reverse-mode differentiation over [`Matrix`] values.
//!
//! A [`Graph`] records one forward pass. Every op keeps whatever it needs
//! for its backward rule, and [`Graph::backward`] walks the tape once in
//! reverse, accumulating adjoints and returning gradients for the
//! parameters that took part in the pass.

use std::borrow::Cow;
use std::collections::HashMap;

use thiserror::Error;

use crate::tensor::{dot, Matrix};

pub const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_K: f64 = 0.044_715;

#[derive(Debug, Error, PartialEq)]
pub enum GraphError {
    #[error("backward already ran on this graph")]
    GraphReuse,
    #[error("loss node must be 1x1, got {0}x{1}")]
    NonScalarLoss(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named trainable tensors. Ids are insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        let id = self.values.len();
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        ParamId(id)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Matrix)> {
        self.names.iter().map(String::as_str).zip(&self.values)
    }

    /// Number of scalar entries across all tensors.
    pub fn numel(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// One term of a row combination: `out[row] += weight * src[src_row]`.
#[derive(Debug, Clone, Copy)]
pub struct RowTerm {
    pub out_row: usize,
    pub src: usize,
    pub src_row: usize,
    pub weight: f64,
}

/// One magnitude-aware triplet over rows of a matrix: anchor, near, far, margin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletRows {
    pub anchor: usize,
    pub near: usize,
    pub far: usize,
    pub margin: f64,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Scale(Var, f64),
    MulConst(Var, Vec<f64>),
    RowCombine { srcs: Vec<Var>, terms: Vec<RowTerm> },
    LayerNorm { x: Var, gamma: Var, beta: Var, xhat: Matrix, inv_std: Vec<f64> },
    Gelu(Var),
    Tanh(Var),
    Attention { q: Var, k: Var, v: Var, segments: Vec<(usize, usize)>, heads: usize, probs: Vec<f64> },
    BceLogits { pred: Var, targets: Vec<f64> },
    Mse { pred: Var, targets: Vec<f64> },
    Triplet { f: Var, triplets: Vec<TripletRows>, dists: Vec<(f64, f64)> },
    WeightedSum(Vec<(Var, f64)>),
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
}

/// Parameter gradients from one backward pass; `None` means the parameter
/// was not reached (its gradient is exactly zero).
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: ParamId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

pub struct Graph<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node<'p>>,
    param_vars: HashMap<ParamId, Var>,
    consumed: bool,
}

fn add_into(slot: &mut Option<Matrix>, g: Matrix) {
    match slot {
        Some(acc) => acc.add_assign(&g),
        None => *slot = Some(g),
    }
}

impl<'p> Graph<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Graph { params, nodes: Vec::new(), param_vars: HashMap::new(), consumed: false }
    }

    fn push(&mut self, value: Cow<'p, Matrix>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Leaf for a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(&v) = self.param_vars.get(&id) {
            return v;
        }
        let params = self.params;
        let v = self.push(Cow::Borrowed(params.get(id)), Op::Param(id));
        self.param_vars.insert(id, v);
        v
    }

    pub fn constant(&mut self, m: Matrix) -> Var {
        self.push(Cow::Owned(m), Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).matmul(self.value(b));
        self.push(Cow::Owned(out), Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Cow::Owned(out), Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        let b = self.value(bias);
        assert_eq!((1, self.value(a).cols), b.shape(), "bias shape");
        let mut out = self.value(a).clone();
        let cols = out.cols;
        for r in 0..out.rows {
            for (o, &bv) in out.data[r * cols..(r + 1) * cols].iter_mut().zip(&b.data) {
                *o += bv;
            }
        }
        self.push(Cow::Owned(out), Op::AddBias(a, bias))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_bias(h, b)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let out = self.value(a).scale(s);
        self.push(Cow::Owned(out), Op::Scale(a, s))
    }

    /// Element-wise product with a constant (used for dropout masks).
    pub fn mul_const(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let src = self.value(a);
        assert_eq!(src.data.len(), factors.len(), "mask length");
        let data = src.data.iter().zip(&factors).map(|(x, f)| x * f).collect();
        let out = Matrix::from_vec(src.rows, src.cols, data);
        self.push(Cow::Owned(out), Op::MulConst(a, factors))
    }

    /// Builds a `rows x cols` matrix whose rows are weighted sums of rows of
    /// `srcs`. Covers embedding lookup, scaling, concatenation and gather.
    pub fn row_combine(&mut self, srcs: Vec<Var>, rows: usize, terms: Vec<RowTerm>) -> Var {
        let cols = self.value(srcs[0]).cols;
        let mut out = Matrix::zeros(rows, cols);
        for t in &terms {
            let src = self.value(srcs[t.src]);
            debug_assert_eq!(src.cols, cols);
            let s = src.row(t.src_row);
            let o = out.row_mut(t.out_row);
            if t.weight == 1.0 {
                for (a, b) in o.iter_mut().zip(s) {
                    *a += b;
                }
            } else {
                for (a, b) in o.iter_mut().zip(s) {
                    *a += t.weight * b;
                }
            }
        }
        self.push(Cow::Owned(out), Op::RowCombine { srcs, terms })
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let xv = self.value(x);
        let (rows, cols) = xv.shape();
        let mut xhat = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let is = 1.0 / (var + LN_EPS).sqrt();
            for (h, v) in xhat.row_mut(r).iter_mut().zip(row) {
                *h = (v - mean) * is;
            }
            inv_std.push(is);
        }
        let g = self.value(gamma);
        let b = self.value(beta);
        let mut out = xhat.clone();
        for r in 0..rows {
            for ((o, gv), bv) in out.row_mut(r).iter_mut().zip(&g.data).zip(&b.data) {
                *o = *o * gv + bv;
            }
        }
        self.push(Cow::Owned(out), Op::LayerNorm { x, gamma, beta, xhat, inv_std })
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let data = src
            .data
            .iter()
            .map(|&x| 0.5 * x * (1.0 + (GELU_C * (x + GELU_K * x * x * x)).tanh()))
            .collect();
        let out = Matrix::from_vec(src.rows, src.cols, data);
        self.push(Cow::Owned(out), Op::Gelu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let src = self.value(a);
        let out = Matrix::from_vec(src.rows, src.cols, src.data.iter().map(|x| x.tanh()).collect());
        self.push(Cow::Owned(out), Op::Tanh(a))
    }

    /// Multi-head scaled dot-product attention restricted to contiguous row
    /// segments: row `i` of segment `(start, len)` attends only to rows of
    /// the same segment.
    pub fn segment_attention(&mut self, q: Var, k: Var, v: Var, segments: Vec<(usize, usize)>, heads: usize) -> Var {
        let (qm, km, vm) = (self.value(q), self.value(k), self.value(v));
        let d = qm.cols;
        assert!(heads > 0 && d % heads == 0, "heads must divide width");
        assert_eq!(qm.shape(), km.shape());
        assert_eq!(qm.shape(), vm.shape());
        let dh = d / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut out = Matrix::zeros(qm.rows, d);
        let mut probs = Vec::with_capacity(segments.iter().map(|s| s.1 * s.1 * heads).sum());
        let mut scores = Vec::new();
        for &(start, len) in &segments {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..len {
                    let qi = &qm.row(start + i)[cols.clone()];
                    scores.clear();
                    let mut max = f64::NEG_INFINITY;
                    for j in 0..len {
                        let s = scale * dot(qi, &km.row(start + j)[cols.clone()]);
                        max = max.max(s);
                        scores.push(s);
                    }
                    let mut z = 0.0;
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z += *s;
                    }
                    let o = &mut out.row_mut(start + i)[cols.clone()];
                    for (j, s) in scores.iter().enumerate() {
                        let p = s / z;
                        probs.push(p);
                        for (a, b) in o.iter_mut().zip(&vm.row(start + j)[cols.clone()]) {
                            *a += p * b;
                        }
                    }
                }
            }
        }
        self.push(Cow::Owned(out), Op::Attention { q, k, v, segments, heads, probs })
    }

    /// Mean binary cross-entropy of `sigmoid(pred)` against 0/1 targets.
    pub fn bce_with_logits(&mut self, pred: Var, targets: Vec<f64>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.data.len(), targets.len(), "bce length");
        let n = targets.len() as f64;
        let loss: f64 = p
            .data
            .iter()
            .zip(&targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / n;
        self.push(Cow::Owned(Matrix::filled(1, 1, loss)), Op::BceLogits { pred, targets })
    }

    pub fn mse(&mut self, pred: Var, targets: Vec<f64>) -> Var {
        let p = self.value(pred);
        assert_eq!(p.data.len(), targets.len(), "mse length");
        let n = targets.len() as f64;
        let loss = p.data.iter().zip(&targets).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n;
        self.push(Cow::Owned(Matrix::filled(1, 1, loss)), Op::Mse { pred, targets })
    }

    /// Mean over triplets of `max(d(a, near) - d(a, far) + margin, 0)` with
    /// Euclidean distances between rows of `f`.
    pub fn triplet_hinge(&mut self, f: Var, triplets: Vec<TripletRows>) -> Var {
        let fm = self.value(f);
        let mut dists = Vec::with_capacity(triplets.len());
        let mut total = 0.0;
        for t in &triplets {
            let d12 = l2(fm.row(t.anchor), fm.row(t.near));
            let d13 = l2(fm.row(t.anchor), fm.row(t.far));
            total += (d12 - d13 + t.margin).max(0.0);
            dists.push((d12, d13));
        }
        let loss = if triplets.is_empty() { 0.0 } else { total / triplets.len() as f64 };
        self.push(Cow::Owned(Matrix::filled(1, 1, loss)), Op::Triplet { f, triplets, dists })
    }

    /// `sum_i w_i * x_i` over same-shaped nodes.
    pub fn weighted_sum(&mut self, terms: Vec<(Var, f64)>) -> Var {
        let first = self.value(terms[0].0);
        let mut out = Matrix::zeros(first.rows, first.cols);
        for &(v, w) in &terms {
            for (o, x) in out.data.iter_mut().zip(&self.value(v).data) {
                *o += w * x;
            }
        }
        self.push(Cow::Owned(out), Op::WeightedSum(terms))
    }

    /// Reverse pass from a scalar node. A graph can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients, GraphError> {
        if self.consumed {
            return Err(GraphError::GraphReuse);
        }
        let lv = self.value(loss);
        if lv.shape() != (1, 1) {
            return Err(GraphError::NonScalarLoss(lv.rows, lv.cols));
        }
        self.consumed = true;
        let mut adj: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::filled(1, 1, 1.0));
        let mut grads: Vec<Option<Matrix>> = (0..self.params.len()).map(|_| None).collect();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => add_into(&mut grads[id.0], g),
                Op::MatMul(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let ga = g.matmul_t(bv);
                    let gb = av.t_matmul(&g);
                    add_into(&mut adj[a.0], ga);
                    add_into(&mut adj[b.0], gb);
                }
                Op::Add(a, b) => {
                    add_into(&mut adj[b.0], g.clone());
                    add_into(&mut adj[a.0], g);
                }
                Op::AddBias(a, bias) => {
                    let mut gb = Matrix::zeros(1, g.cols);
                    for r in 0..g.rows {
                        for (o, v) in gb.data.iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    add_into(&mut adj[bias.0], gb);
                    add_into(&mut adj[a.0], g);
                }
                Op::Scale(a, s) => add_into(&mut adj[a.0], g.scale(*s)),
                Op::MulConst(a, factors) => {
                    let data = g.data.iter().zip(factors).map(|(x, f)| x * f).collect();
                    add_into(&mut adj[a.0], Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::RowCombine { srcs, terms } => {
                    let mut local: Vec<Option<Matrix>> = vec![None; srcs.len()];
                    for t in terms {
                        let slot = local[t.src].get_or_insert_with(|| {
                            let s = self.value(srcs[t.src]);
                            Matrix::zeros(s.rows, s.cols)
                        });
                        let go = g.row(t.out_row);
                        for (a, b) in slot.row_mut(t.src_row).iter_mut().zip(go) {
                            *a += t.weight * b;
                        }
                    }
                    for (src, m) in srcs.iter().zip(local) {
                        if let Some(m) = m {
                            add_into(&mut adj[src.0], m);
                        }
                    }
                }
                Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                    let gam = self.value(*gamma);
                    let cols = g.cols;
                    let mut gg = Matrix::zeros(1, cols);
                    let mut gbeta = Matrix::zeros(1, cols);
                    let mut gx = Matrix::zeros(g.rows, cols);
                    for r in 0..g.rows {
                        let gr = g.row(r);
                        let hr = xhat.row(r);
                        let mut mean_d = 0.0;
                        let mut mean_dh = 0.0;
                        for c in 0..cols {
                            gg.data[c] += gr[c] * hr[c];
                            gbeta.data[c] += gr[c];
                            let dh = gr[c] * gam.data[c];
                            mean_d += dh;
                            mean_dh += dh * hr[c];
                        }
                        mean_d /= cols as f64;
                        mean_dh /= cols as f64;
                        let out = gx.row_mut(r);
                        for c in 0..cols {
                            let dh = gr[c] * gam.data[c];
                            out[c] = inv_std[r] * (dh - mean_d - hr[c] * mean_dh);
                        }
                    }
                    add_into(&mut adj[gamma.0], gg);
                    add_into(&mut adj[beta.0], gbeta);
                    add_into(&mut adj[x.0], gx);
                }
                Op::Gelu(a) => {
                    let xv = self.value(*a);
                    let data = xv
                        .data
                        .iter()
                        .zip(&g.data)
                        .map(|(&x, &go)| {
                            let t = (GELU_C * (x + GELU_K * x * x * x)).tanh();
                            let d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_K * x * x);
                            go * d
                        })
                        .collect();
                    add_into(&mut adj[a.0], Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::Tanh(a) => {
                    let y = &node.value;
                    let data = y.data.iter().zip(&g.data).map(|(t, go)| go * (1.0 - t * t)).collect();
                    add_into(&mut adj[a.0], Matrix::from_vec(g.rows, g.cols, data));
                }
                Op::Attention { q, k, v, segments, heads, probs } => {
                    let (qm, km, vm) = (self.value(*q), self.value(*k), self.value(*v));
                    let d = qm.cols;
                    let dh = d / heads;
                    let scale = 1.0 / (dh as f64).sqrt();
                    let mut gq = Matrix::zeros(qm.rows, d);
                    let mut gk = Matrix::zeros(km.rows, d);
                    let mut gv = Matrix::zeros(vm.rows, d);
                    let mut off = 0;
                    let mut dp = Vec::new();
                    for &(start, len) in segments {
                        for h in 0..*heads {
                            let cols = h * dh..(h + 1) * dh;
                            for i in 0..len {
                                let p = &probs[off..off + len];
                                off += len;
                                let go = &g.row(start + i)[cols.clone()];
                                dp.clear();
                                let mut sum = 0.0;
                                for j in 0..len {
                                    let vj = &vm.row(start + j)[cols.clone()];
                                    let dpj = dot(go, vj);
                                    sum += p[j] * dpj;
                                    dp.push(dpj);
                                    for (a, b) in gv.row_mut(start + j)[cols.clone()].iter_mut().zip(go) {
                                        *a += p[j] * b;
                                    }
                                }
                                let qi = &qm.row(start + i)[cols.clone()];
                                for j in 0..len {
                                    let ds = p[j] * (dp[j] - sum) * scale;
                                    if ds == 0.0 {
                                        continue;
                                    }
                                    let kj = &km.row(start + j)[cols.clone()];
                                    for (a, b) in gq.row_mut(start + i)[cols.clone()].iter_mut().zip(kj) {
                                        *a += ds * b;
                                    }
                                    for (a, b) in gk.row_mut(start + j)[cols.clone()].iter_mut().zip(qi) {
                                        *a += ds * b;
                                    }
                                }
                            }
                        }
                    }
                    add_into(&mut adj[q.0], gq);
                    add_into(&mut adj[k.0], gk);
                    add_into(&mut adj[v.0], gv);
                }
                Op::BceLogits { pred, targets } => {
                    let p = self.value(*pred);
                    let scale = g.data[0] / targets.len() as f64;
                    let data = p.data.iter().zip(targets).map(|(&z, &y)| scale * (sigmoid(z) - y)).collect();
                    add_into(&mut adj[pred.0], Matrix::from_vec(p.rows, p.cols, data));
                }
                Op::Mse { pred, targets } => {
                    let p = self.value(*pred);
                    let scale = 2.0 * g.data[0] / targets.len() as f64;
                    let data = p.data.iter().zip(targets).map(|(a, b)| scale * (a - b)).collect();
                    add_into(&mut adj[pred.0], Matrix::from_vec(p.rows, p.cols, data));
                }
                Op::Triplet { f, triplets, dists } => {
                    let fm = self.value(*f);
                    let mut gf = Matrix::zeros(fm.rows, fm.cols);
                    let scale = if triplets.is_empty() { 0.0 } else { g.data[0] / triplets.len() as f64 };
                    for (t, &(d12, d13)) in triplets.iter().zip(dists) {
                        if d12 - d13 + t.margin <= 0.0 {
                            continue;
                        }
                        let a = fm.row(t.anchor).to_vec();
                        if d12 > 0.0 {
                            let n = fm.row(t.near).to_vec();
                            for c in 0..fm.cols {
                                let u = scale * (a[c] - n[c]) / d12;
                                gf.row_mut(t.anchor)[c] += u;
                                gf.row_mut(t.near)[c] -= u;
                            }
                        }
                        if d13 > 0.0 {
                            let fr = fm.row(t.far).to_vec();
                            for c in 0..fm.cols {
                                let u = scale * (a[c] - fr[c]) / d13;
                                gf.row_mut(t.anchor)[c] -= u;
                                gf.row_mut(t.far)[c] += u;
                            }
                        }
                    }
                    add_into(&mut adj[f.0], gf);
                }
                Op::WeightedSum(terms) => {
                    for &(v, w) in terms {
                        add_into(&mut adj[v.0], g.scale(w));
                    }
                }
            }
        }
        Ok(Gradients { grads })
    }
}

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
