use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::autograd::{Graph, Matrix, ParamId, ParamStore, Var};
use super::tokenizer::WordTokenizer;
use crate::error::{Error, Result};

/// Training-time stochasticity for a single forward pass.
pub struct Dropout<'r> {
    pub p: f64,
    pub rng: &'r mut ChaCha8Rng,
}

impl Dropout<'_> {
    pub fn mask(&mut self, len: usize) -> Vec<f64> {
        let keep = 1.0 / (1.0 - self.p);
        (0..len)
            .map(|_| {
                if self.rng.random::<f64>() < self.p {
                    0.0
                } else {
                    keep
                }
            })
            .collect()
    }
}

/// What the co-prediction model needs from a masked language model.
///
/// Parameters live in the caller's [`ParamStore`]; the backbone only keeps ids.
pub trait Backbone: Send + Sync {
    fn hidden_dim(&self) -> usize;

    /// Maximum input length in tokens, special tokens included.
    fn max_len(&self) -> usize;

    fn tokenizer(&self) -> &WordTokenizer;

    /// The `vocab × hidden` input embedding table.
    fn token_embeddings(&self) -> ParamId;

    /// Encodes `seq × hidden` input embeddings into `seq × hidden` hidden states.
    /// `dropout` is `Some` only in training mode.
    fn encode_embeddings(&self, g: &mut Graph, inputs: Var, dropout: Option<&mut Dropout>) -> Var;

    fn token_embedding(&self, store: &ParamStore, token: usize) -> Vec<f64> {
        store.get(self.token_embeddings()).row(token).to_vec()
    }

    fn mask_embedding(&self, store: &ParamStore) -> Vec<f64> {
        self.token_embedding(store, self.tokenizer().mask_id())
    }

    /// Evaluation-mode hidden states for a token id sequence.
    fn encode(&self, store: &ParamStore, tokens: &[usize]) -> Result<Matrix> {
        if tokens.is_empty() || tokens.len() > self.max_len() {
            return Err(Error::invalid(
                "tokens",
                format!("length {} outside 1..={}", tokens.len(), self.max_len()),
            ));
        }
        let table = self.token_embeddings();
        let mut g = Graph::new(store);
        let inputs = g.gather(tokens.iter().map(|&t| (table, t)).collect());
        let out = self.encode_embeddings(&mut g, inputs, None);
        Ok(g.value(out).clone())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TinyBackboneConfig {
    pub hidden_dim: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_dim: usize,
    pub max_len: usize,
    pub init_std: f64,
}

impl Default for TinyBackboneConfig {
    fn default() -> Self {
        Self {
            hidden_dim: 32,
            n_layers: 2,
            n_heads: 2,
            ffn_dim: 64,
            max_len: 64,
            init_std: 0.1,
        }
    }
}

impl TinyBackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dim == 0 || self.n_heads == 0 || !self.hidden_dim.is_multiple_of(self.n_heads) {
            return Err(Error::invalid(
                "hidden_dim",
                format!(
                    "{} is not a positive multiple of n_heads {}",
                    self.hidden_dim, self.n_heads
                ),
            ));
        }
        if self.ffn_dim == 0 {
            return Err(Error::invalid("ffn_dim", "must be positive"));
        }
        if self.max_len < 8 {
            return Err(Error::invalid("max_len", "must be at least 8"));
        }
        if !(self.init_std > 0.0 && self.init_std.is_finite()) {
            return Err(Error::invalid("init_std", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
struct Layer {
    wq: ParamId,
    bq: ParamId,
    wk: ParamId,
    bk: ParamId,
    wv: ParamId,
    bv: ParamId,
    wo: ParamId,
    bo: ParamId,
    ln1_g: ParamId,
    ln1_b: ParamId,
    w1: ParamId,
    b1: ParamId,
    w2: ParamId,
    b2: ParamId,
    ln2_g: ParamId,
    ln2_b: ParamId,
}

/// A small post-LayerNorm transformer encoder with learned positions,
/// randomly initialized from a seed. Stands in for a pre-trained masked LM.
#[derive(Clone, Debug)]
pub struct TinyBackbone {
    config: TinyBackboneConfig,
    tokenizer: WordTokenizer,
    tok_emb: ParamId,
    pos_emb: ParamId,
    emb_ln_g: ParamId,
    emb_ln_b: ParamId,
    layers: Vec<Layer>,
}

const LN_EPS: f64 = 1e-12;

impl TinyBackbone {
    pub fn new(
        config: TinyBackboneConfig,
        tokenizer: WordTokenizer,
        store: &mut ParamStore,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.hidden_dim;
        let normal = Normal::new(0.0, config.init_std).expect("validated std");
        let mut randn =
            |rows: usize, cols: usize| Matrix::from_fn(rows, cols, |_, _| normal.sample(&mut *rng));
        let ones = |n: usize| Matrix::from_vec(1, n, vec![1.0; n]);
        let zeros = |n: usize| Matrix::zeros(1, n);

        let tok_emb = store.add("backbone.tok_emb", randn(tokenizer.len(), d), true);
        let pos_emb = store.add("backbone.pos_emb", randn(config.max_len, d), true);
        let emb_ln_g = store.add("backbone.emb_ln.g", ones(d), false);
        let emb_ln_b = store.add("backbone.emb_ln.b", zeros(d), false);
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = |n: &str| format!("backbone.layer{l}.{n}");
            layers.push(Layer {
                wq: store.add(p("wq"), randn(d, d), true),
                bq: store.add(p("bq"), zeros(d), false),
                wk: store.add(p("wk"), randn(d, d), true),
                bk: store.add(p("bk"), zeros(d), false),
                wv: store.add(p("wv"), randn(d, d), true),
                bv: store.add(p("bv"), zeros(d), false),
                wo: store.add(p("wo"), randn(d, d), true),
                bo: store.add(p("bo"), zeros(d), false),
                ln1_g: store.add(p("ln1.g"), ones(d), false),
                ln1_b: store.add(p("ln1.b"), zeros(d), false),
                w1: store.add(p("w1"), randn(d, config.ffn_dim), true),
                b1: store.add(p("b1"), zeros(config.ffn_dim), false),
                w2: store.add(p("w2"), randn(config.ffn_dim, d), true),
                b2: store.add(p("b2"), zeros(d), false),
                ln2_g: store.add(p("ln2.g"), ones(d), false),
                ln2_b: store.add(p("ln2.b"), zeros(d), false),
            });
        }
        Ok(Self {
            config,
            tokenizer,
            tok_emb,
            pos_emb,
            emb_ln_g,
            emb_ln_b,
            layers,
        })
    }

    pub fn config(&self) -> &TinyBackboneConfig {
        &self.config
    }

    fn linear(g: &mut Graph, x: Var, w: ParamId, b: ParamId) -> Var {
        let w = g.param(w);
        let b = g.param(b);
        let xw = g.matmul(x, w);
        g.add_row(xw, b)
    }
}

impl Backbone for TinyBackbone {
    fn hidden_dim(&self) -> usize {
        self.config.hidden_dim
    }

    fn max_len(&self) -> usize {
        self.config.max_len
    }

    fn tokenizer(&self) -> &WordTokenizer {
        &self.tokenizer
    }

    fn token_embeddings(&self) -> ParamId {
        self.tok_emb
    }

    fn encode_embeddings(&self, g: &mut Graph, inputs: Var, dropout: Option<&mut Dropout>) -> Var {
        let n = g.value(inputs).rows();
        assert!(n <= self.config.max_len, "sequence longer than max_len");
        let pos = g.gather((0..n).map(|i| (self.pos_emb, i)).collect());
        let x = g.add(inputs, pos);
        let (lg, lb) = (g.param(self.emb_ln_g), g.param(self.emb_ln_b));
        let mut x = g.layer_norm(x, lg, lb, LN_EPS);
        if let Some(d) = dropout {
            if d.p > 0.0 {
                let mask = d.mask(n * self.config.hidden_dim);
                x = g.dropout(x, mask);
            }
        }
        for layer in &self.layers {
            let q = Self::linear(g, x, layer.wq, layer.bq);
            let k = Self::linear(g, x, layer.wk, layer.bk);
            let v = Self::linear(g, x, layer.wv, layer.bv);
            let att = g.attention(q, k, v, self.config.n_heads);
            let att = Self::linear(g, att, layer.wo, layer.bo);
            let res = g.add(x, att);
            let (g1, b1) = (g.param(layer.ln1_g), g.param(layer.ln1_b));
            x = g.layer_norm(res, g1, b1, LN_EPS);

            let h = Self::linear(g, x, layer.w1, layer.b1);
            let h = g.gelu(h);
            let h = Self::linear(g, h, layer.w2, layer.b2);
            let res = g.add(x, h);
            let (g2, b2) = (g.param(layer.ln2_g), g.param(layer.ln2_b));
            x = g.layer_norm(res, g2, b2, LN_EPS);
        }
        x
    }
}
