//! The full network: embedding tables, shared intra-feature attention,
//! encoder, magnitude regularizer head and one prediction head per table.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ablation::{AblationConfig, NumericEncoding};
use crate::backbone::{self, EncoderParams, PredictionHead, RegHead, Triplet};
use crate::encoder::{self, EmbeddingTables, EncodeError, FeatureTokens, IfaParams, FeatureValue};
use crate::graph::{Graph, GraphError, Gradients, ParamStore, Var};
use crate::table::Task;
use crate::tensor::Matrix;
use crate::vocab::Vocabulary;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("no prediction head {0}")]
    NoHead(usize),
    #[error("missing parameter `{0}`")]
    MissingParam(String),
    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub d: usize,
    pub ifa_heads: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_name_len: usize,
    pub n_bin: usize,
    pub head_dropout: f64,
    pub ablation: AblationConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            d: 64,
            ifa_heads: 4,
            n_layers: 4,
            n_heads: 4,
            d_ff: 256,
            max_name_len: 16,
            n_bin: 256,
            head_dropout: 0.1,
            ablation: AblationConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A small configuration that trains in seconds on a laptop.
    pub fn tiny() -> Self {
        ModelConfig { d: 16, ifa_heads: 2, n_layers: 2, n_heads: 2, d_ff: 32, ..ModelConfig::default() }
    }

    /// Magnitude token count after any `nbin=K` override.
    pub fn effective_n_bin(&self) -> usize {
        self.ablation.n_bin.unwrap_or(self.n_bin)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.d == 0 {
            return bad("d must be positive".into());
        }
        if self.ifa_heads == 0 || !self.d.is_multiple_of(self.ifa_heads) {
            return bad(format!("ifa_heads {} must divide d {}", self.ifa_heads, self.d));
        }
        if self.n_heads == 0 || !self.d.is_multiple_of(self.n_heads) {
            return bad(format!("n_heads {} must divide d {}", self.n_heads, self.d));
        }
        if self.max_name_len == 0 {
            return bad("max_name_len must be positive".into());
        }
        if self.effective_n_bin() < 2 {
            return bad("n_bin must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.head_dropout) {
            return bad("head_dropout must lie in [0, 1)".into());
        }
        Ok(())
    }
}

/// Scalar pieces of one training loss evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub sup: f64,
    pub reg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabModel {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: ParamStore,
    pub tables: EmbeddingTables,
    pub ifa: IfaParams,
    pub encoder: EncoderParams,
    pub reg_head: RegHead,
    pub heads: Vec<PredictionHead>,
}

impl TabModel {
    /// Randomly initialised trunk without prediction heads.
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, vocab: Vocabulary, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let n_bin = config.effective_n_bin();
        if vocab.n_bin() != n_bin {
            return Err(ModelError::ConfigMismatch(format!("vocabulary has {} magnitude bins, model {n_bin}", vocab.n_bin())));
        }
        let d = config.d;
        let mut params = ParamStore::new();
        let tables = EmbeddingTables {
            word: params.add("emb.word", Matrix::randn(vocab.n_word_ids(), d, 1.0, rng)),
            magnitude: params.add("emb.magnitude", Matrix::randn(n_bin + 1, d, 1.0, rng)),
            cls: params.add("emb.cls", Matrix::randn(1, d, 1.0, rng)),
            position: params.add("emb.position", Matrix::randn(config.max_name_len + 1, d, 1.0, rng)),
        };
        let s = 1.0 / (d as f64).sqrt();
        let ifa = IfaParams {
            wq: params.add("ifa.wq", Matrix::randn(d, d, s, rng)),
            wk: params.add("ifa.wk", Matrix::randn(d, d, s, rng)),
            wv: params.add("ifa.wv", Matrix::randn(d, d, s, rng)),
            wo: params.add("ifa.wo", Matrix::randn(d, d, s, rng)),
            n_heads: config.ifa_heads,
        };
        let encoder = EncoderParams::init(&mut params, "enc", config.n_layers, d, config.d_ff, config.n_heads, rng);
        let reg_head = RegHead::init(&mut params, "reg", d, rng);
        Ok(TabModel { config, vocab, params, tables, ifa, encoder, reg_head, heads: Vec::new() })
    }

    /// Rebuilds the parameter handles from a named store (checkpoint load).
    pub fn from_store(config: ModelConfig, vocab: Vocabulary, params: ParamStore, n_heads: usize) -> Result<Self, ModelError> {
        config.validate()?;
        let get = |name: String| params.id(&name).ok_or(ModelError::MissingParam(name));
        let tables = EmbeddingTables {
            word: get("emb.word".into())?,
            magnitude: get("emb.magnitude".into())?,
            cls: get("emb.cls".into())?,
            position: get("emb.position".into())?,
        };
        let ifa = IfaParams {
            wq: get("ifa.wq".into())?,
            wk: get("ifa.wk".into())?,
            wv: get("ifa.wv".into())?,
            wo: get("ifa.wo".into())?,
            n_heads: config.ifa_heads,
        };
        let mut layers = Vec::new();
        for l in 0..config.n_layers {
            let p = |n: &str| get(format!("enc.{l}.{n}"));
            layers.push(backbone::EncoderLayer {
                ln1_g: p("ln1.g")?,
                ln1_b: p("ln1.b")?,
                wq: p("attn.wq")?,
                bq: p("attn.bq")?,
                wk: p("attn.wk")?,
                bk: p("attn.bk")?,
                wv: p("attn.wv")?,
                bv: p("attn.bv")?,
                wo: p("attn.wo")?,
                bo: p("attn.bo")?,
                ln2_g: p("ln2.g")?,
                ln2_b: p("ln2.b")?,
                w1: p("ffn.w1")?,
                b1: p("ffn.b1")?,
                w2: p("ffn.w2")?,
                b2: p("ffn.b2")?,
            });
        }
        let reg_head = RegHead {
            w: get("reg.linear.w".into())?,
            b: get("reg.linear.b".into())?,
            ln_g: get("reg.ln.g".into())?,
            ln_b: get("reg.ln.b".into())?,
        };
        let mut heads = Vec::new();
        for m in 0..n_heads {
            let p = |n: &str| get(format!("head.{m}.{n}"));
            heads.push(PredictionHead {
                w2: p("linear2.w")?,
                b2: p("linear2.b")?,
                w1: p("linear1.w")?,
                b1: p("linear1.b")?,
                dropout: config.head_dropout,
            });
        }
        let model = TabModel {
            config,
            vocab,
            params,
            tables,
            ifa,
            encoder: EncoderParams { layers, n_heads: config.n_heads },
            reg_head,
            heads,
        };
        let n_bin = model.tables.n_bin(&model.params);
        if n_bin != model.vocab.n_bin() || model.params.get(model.tables.word).rows != model.vocab.n_word_ids() {
            return Err(ModelError::ConfigMismatch("parameter tables do not match the vocabulary".into()));
        }
        Ok(model)
    }

    pub fn add_head<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let m = self.heads.len();
        let head = PredictionHead::init(&mut self.params, &format!("head.{m}"), self.config.d, self.config.head_dropout, rng);
        self.heads.push(head);
        m
    }

    pub fn n_bin(&self) -> usize {
        self.tables.n_bin(&self.params)
    }

    /// Checks that tokens were produced for this model's configuration.
    pub fn check_tokens(&self, row: &[FeatureTokens]) -> Result<(), ModelError> {
        for ft in row {
            let ok = match (&ft.value, self.config.ablation.numeric_encoding) {
                (FeatureValue::Magnitude { .. } | FeatureValue::Missing, NumericEncoding::Rmt) => true,
                (FeatureValue::NameScaled { .. } | FeatureValue::Missing, NumericEncoding::Vmfe) => true,
                (FeatureValue::Magnitude { .. } | FeatureValue::NameScaled { .. }, NumericEncoding::Value2Str) => false,
                (FeatureValue::Text(_), _) | (FeatureValue::Missing, _) => true,
                _ => false,
            };
            if !ok {
                return Err(ModelError::ConfigMismatch(format!(
                    "feature value {:?} under {:?} encoding",
                    ft.value, self.config.ablation.numeric_encoding
                )));
            }
        }
        Ok(())
    }

    /// CLS representations (`B x d`) of a batch of rows.
    pub(crate) fn cls_rows(&self, g: &mut Graph<'_>, rows: &[&[FeatureTokens]]) -> Result<Var, ModelError> {
        let ab = &self.config.ablation;
        let x = if ab.use_ifa {
            encoder::fuse_rows(g, rows, &self.params, &self.ifa, &self.tables, ab.value_position_encoding)?
        } else {
            encoder::flat_rows(g, rows, &self.params, &self.tables)?
        };
        let lengths = encoder::backbone_lengths(rows, ab.use_ifa, self.config.max_name_len);
        let mut spans = Vec::with_capacity(lengths.len());
        let mut start = 0;
        for len in lengths {
            spans.push((start, len));
            start += len;
        }
        debug_assert_eq!(start, g.value(x).rows);
        Ok(backbone::encode_rows(g, x, &spans, &self.encoder))
    }

    /// `B x 1` predictions (logits for binclass). Dropout is active iff an rng is given.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        rows: &[&[FeatureTokens]],
        head: usize,
        rng: Option<&mut R>,
    ) -> Result<Var, ModelError> {
        let h = self.heads.get(head).ok_or(ModelError::NoHead(head))?;
        let cls = self.cls_rows(g, rows)?;
        Ok(backbone::head_rows(g, cls, h, rng))
    }

    /// Eval-mode predictions for many rows, in chunks.
    pub fn predict(&self, rows: &[Vec<FeatureTokens>], head: usize) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(rows.len());
        for chunk in rows.chunks(256) {
            let refs: Vec<&[FeatureTokens]> = chunk.iter().map(Vec::as_slice).collect();
            let mut g = Graph::new(&self.params);
            let p = self.forward::<rand_chacha::ChaCha8Rng>(&mut g, &refs, head, None)?;
            out.extend_from_slice(&g.value(p).data);
        }
        Ok(out)
    }

    /// Builds `L_sup + lambda * L_reg` on a graph. `triplets` empty or
    /// `lambda == 0` leaves the regularizer out of the graph entirely.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_graph<R: Rng + ?Sized>(
        &self,
        g: &mut Graph<'_>,
        rows: &[&[FeatureTokens]],
        targets: &[f64],
        task: Task,
        head: usize,
        lambda: f64,
        triplets: &[Triplet],
        rng: Option<&mut R>,
    ) -> Result<(Var, LossParts), ModelError> {
        let pred = self.forward(g, rows, head, rng)?;
        let sup = backbone::supervised_node(g, pred, targets, task);
        let sup_v = g.value(sup).data[0];
        if lambda == 0.0 || triplets.is_empty() {
            return Ok((sup, LossParts { total: sup_v, sup: sup_v, reg: 0.0 }));
        }
        let reg = backbone::triplet_node(g, self.tables.magnitude, &self.reg_head, triplets, self.n_bin());
        let reg_v = g.value(reg).data[0];
        let total = g.weighted_sum(vec![(sup, 1.0), (reg, lambda)]);
        let total_v = g.value(total).data[0];
        Ok((total, LossParts { total: total_v, sup: sup_v, reg: reg_v }))
    }

    /// One forward + backward pass.
    #[allow(clippy::too_many_arguments)]
    pub fn loss_and_grads<R: Rng + ?Sized>(
        &self,
        rows: &[&[FeatureTokens]],
        targets: &[f64],
        task: Task,
        head: usize,
        lambda: f64,
        triplets: &[Triplet],
        rng: Option<&mut R>,
    ) -> Result<(LossParts, Gradients), ModelError> {
        let mut g = Graph::new(&self.params);
        let (loss, parts) = self.loss_graph(&mut g, rows, targets, task, head, lambda, triplets, rng)?;
        let grads = g.backward(loss)?;
        Ok((parts, grads))
    }

    /// `f(k)` for every real magnitude bin, `n_bin x d`.
    pub fn magnitude_features(&self) -> Matrix {
        let bins: Vec<usize> = (0..self.n_bin()).collect();
        let mut g = Graph::new(&self.params);
        let f = backbone::reg_features(&mut g, self.tables.magnitude, &self.reg_head, &bins);
        g.value(f).clone()
    }

    /// Keeps the trunk and drops all prediction heads (and their tensors).
    pub fn trunk_only(&self) -> TabModel {
        let mut params = ParamStore::new();
        for (name, m) in self.params.iter() {
            if !name.starts_with("head.") {
                params.add(name, m.clone());
            }
        }
        TabModel::from_store(self.config, self.vocab.clone(), params, 0).expect("trunk tensors present")
    }
}
