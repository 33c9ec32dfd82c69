//! Masked-language-model backbone: tokenization, contextual hidden states
//! and vocabulary scoring through a weight-tied MLM head.
//!
//! One transformer implementation serves two roles. The toy backbone is
//! built from a corpus-derived word-level vocabulary and trained from
//! scratch; the pretrained adapter loads the same architecture from an
//! exported checkpoint with a wordpiece vocabulary.

pub mod pretrained;
pub mod vocab;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::float::Float;
use crate::math::tape::{NodeId, Tape};
use crate::math::{gelu, layer_norm_rows, softmax_rows_scaled, Matrix};
use crate::rng::Rng;
use crate::template::PromptEncoding;
pub use vocab::PromptTokenizer;
use vocab::Vocab;

/// Contract every backbone satisfies: token-level hidden states of width
/// `hidden_dim` and a vocabulary-scoring map for any hidden state.
pub trait Backbone<F: Float>: PromptTokenizer {
    fn hidden_dim(&self) -> usize;
    fn vocab_size(&self) -> usize;
    /// Contextual states, one row per input token.
    fn encode(&self, ids: &[u32]) -> Result<Matrix<F>>;
    /// Scores every vocabulary entry for one hidden state.
    fn mlm_score(&self, hidden: &[F]) -> Result<Vec<F>>;

    fn encode_prompt(&self, enc: &PromptEncoding) -> Result<Matrix<F>> {
        self.encode(&enc.token_ids)
    }
}

/// Configuration of the small trainable backbone.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ToyBackboneConfig {
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    /// Feed-forward width; defaults to 4 * d_h.
    pub ff_dim: Option<usize>,
    pub dropout: f64,
    pub seed: u64,
}

impl Default for ToyBackboneConfig {
    fn default() -> Self {
        ToyBackboneConfig {
            d_h: 32,
            layers: 2,
            heads: 2,
            ff_dim: None,
            dropout: 0.1,
            seed: 0,
        }
    }
}

impl ToyBackboneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_h == 0 || self.layers == 0 || self.heads == 0 {
            return Err(Error::Config("backbone dimensions must be positive".into()));
        }
        if !self.d_h.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "d_h {} must be divisible by heads {}",
                self.d_h, self.heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Architecture dimensions shared by toy and pretrained instances.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BackboneDims {
    pub d_h: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub dropout: f64,
    pub ln_eps: f64,
}

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone)]
struct EncoderLayer<F> {
    wq: Matrix<F>,
    bq: Matrix<F>,
    wk: Matrix<F>,
    bk: Matrix<F>,
    wv: Matrix<F>,
    bv: Matrix<F>,
    wo: Matrix<F>,
    bo: Matrix<F>,
    ln1_gamma: Matrix<F>,
    ln1_beta: Matrix<F>,
    w1: Matrix<F>,
    b1: Matrix<F>,
    w2: Matrix<F>,
    b2: Matrix<F>,
    ln2_gamma: Matrix<F>,
    ln2_beta: Matrix<F>,
}

impl<F: Float> EncoderLayer<F> {
    fn new(d: usize, ff: usize, rng: &mut Rng) -> Self {
        EncoderLayer {
            wq: Matrix::random_normal(d, d, INIT_STD, rng),
            bq: Matrix::zeros(1, d),
            wk: Matrix::random_normal(d, d, INIT_STD, rng),
            bk: Matrix::zeros(1, d),
            wv: Matrix::random_normal(d, d, INIT_STD, rng),
            bv: Matrix::zeros(1, d),
            wo: Matrix::random_normal(d, d, INIT_STD, rng),
            bo: Matrix::zeros(1, d),
            ln1_gamma: Matrix::filled(1, d, F::one()),
            ln1_beta: Matrix::zeros(1, d),
            w1: Matrix::random_normal(d, ff, INIT_STD, rng),
            b1: Matrix::zeros(1, ff),
            w2: Matrix::random_normal(ff, d, INIT_STD, rng),
            b2: Matrix::zeros(1, d),
            ln2_gamma: Matrix::filled(1, d, F::one()),
            ln2_beta: Matrix::zeros(1, d),
        }
    }
}

/// Transformer encoder with learned positions and a weight-tied MLM head.
#[derive(Debug, Clone)]
pub struct TransformerBackbone<F> {
    dims: BackboneDims,
    vocab: Vocab,
    word_embed: Matrix<F>,
    pos_embed: Matrix<F>,
    embed_ln_gamma: Matrix<F>,
    embed_ln_beta: Matrix<F>,
    layers: Vec<EncoderLayer<F>>,
    mlm_w: Matrix<F>,
    mlm_b: Matrix<F>,
    mlm_ln_gamma: Matrix<F>,
    mlm_ln_beta: Matrix<F>,
    mlm_bias: Matrix<F>,
    seed: u64,
}

impl<F: Float> TransformerBackbone<F> {
    pub fn new(dims: BackboneDims, vocab: Vocab, seed: u64) -> Self {
        assert_eq!(dims.d_h % dims.heads, 0, "d_h divisible by heads");
        let mut rng = Rng::derive(seed, "backbone-init");
        let d = dims.d_h;
        let v = vocab.len();
        let layers = (0..dims.layers)
            .map(|_| EncoderLayer::new(d, dims.ff_dim, &mut rng))
            .collect();
        TransformerBackbone {
            word_embed: Matrix::random_normal(v, d, INIT_STD, &mut rng),
            pos_embed: Matrix::random_normal(dims.max_positions, d, INIT_STD, &mut rng),
            embed_ln_gamma: Matrix::filled(1, d, F::one()),
            embed_ln_beta: Matrix::zeros(1, d),
            layers,
            mlm_w: Matrix::random_normal(d, d, INIT_STD, &mut rng),
            mlm_b: Matrix::zeros(1, d),
            mlm_ln_gamma: Matrix::filled(1, d, F::one()),
            mlm_ln_beta: Matrix::zeros(1, d),
            mlm_bias: Matrix::zeros(1, v),
            dims,
            vocab,
            seed,
        }
    }

    /// Builds the desk-scale backbone over a word-level vocabulary drawn
    /// from the given word iterator (corpus text plus template and answer
    /// words).
    pub fn toy(
        cfg: &ToyBackboneConfig,
        words: impl IntoIterator<Item = String>,
        max_positions: usize,
    ) -> Result<Self> {
        cfg.validate()?;
        let vocab = Vocab::word_level(words);
        let dims = BackboneDims {
            d_h: cfg.d_h,
            layers: cfg.layers,
            heads: cfg.heads,
            ff_dim: cfg.ff_dim.unwrap_or(4 * cfg.d_h),
            max_positions,
            dropout: cfg.dropout,
            ln_eps: 1e-12,
        };
        Ok(TransformerBackbone::new(dims, vocab, cfg.seed))
    }

    pub fn dims(&self) -> &BackboneDims {
        &self.dims
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Extends the vocabulary and embedding table with new atomic tokens.
    /// Fresh rows are drawn from N(0, 0.02^2), seeded per surface.
    pub fn register_special_tokens(&mut self, surfaces: &[&str]) -> Result<Vec<u32>> {
        let mut ids = Vec::with_capacity(surfaces.len());
        for surface in surfaces {
            let id = self.vocab.add_special(surface)?;
            let mut rng = Rng::derive(self.seed, &format!("special-token:{surface}"));
            let row = Matrix::<F>::random_normal(1, self.dims.d_h, INIT_STD, &mut rng);
            let mut data = std::mem::take(&mut self.word_embed).into_parts();
            data.extend_from_slice(row.as_slice());
            self.word_embed = Matrix::from_vec(self.vocab.len(), self.dims.d_h, data);
            let mut bias = std::mem::take(&mut self.mlm_bias).into_parts();
            bias.push(F::zero());
            self.mlm_bias = Matrix::row_vector(bias);
            ids.push(id);
        }
        Ok(ids)
    }

    fn check_ids(&self, ids: &[u32]) -> Result<()> {
        if ids.len() > self.dims.max_positions {
            return Err(Error::PromptOverflow {
                length: ids.len(),
                max: self.dims.max_positions,
            });
        }
        for &id in ids {
            if id as usize >= self.vocab.len() {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: self.vocab.len(),
                });
            }
        }
        Ok(())
    }

    fn eps(&self) -> F {
        F::of_f64(self.dims.ln_eps)
    }

    fn attn_scale(&self) -> F {
        F::of_f64(1.0 / ((self.dims.d_h / self.dims.heads) as f64).sqrt())
    }

    /// Inference forward pass (no dropout).
    fn forward_eval(&self, ids: &[u32]) -> Matrix<F> {
        let d = self.dims.d_h;
        let heads = self.dims.heads;
        let dk = d / heads;
        let eps = self.eps();

        let mut x = Matrix::zeros(ids.len(), d);
        for (r, &id) in ids.iter().enumerate() {
            let w = self.word_embed.row(id as usize);
            let p = self.pos_embed.row(r);
            for (o, (&a, &b)) in x.row_mut(r).iter_mut().zip(w.iter().zip(p.iter())) {
                *o = a + b;
            }
        }
        x = layer_norm_rows(&x, &self.embed_ln_gamma, &self.embed_ln_beta, eps);

        for layer in &self.layers {
            let q = x.matmul(&layer.wq).add_row_broadcast(&layer.bq);
            let k = x.matmul(&layer.wk).add_row_broadcast(&layer.bk);
            let v = x.matmul(&layer.wv).add_row_broadcast(&layer.bv);
            let mut head_outputs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = q.slice_cols(h * dk, dk);
                let kh = k.slice_cols(h * dk, dk);
                let vh = v.slice_cols(h * dk, dk);
                let scores = qh.matmul_transpose_b(&kh);
                let probs = softmax_rows_scaled(&scores, self.attn_scale());
                head_outputs.push(probs.matmul(&vh));
            }
            let refs: Vec<&Matrix<F>> = head_outputs.iter().collect();
            let concat = Matrix::concat_cols(&refs);
            let attn = concat.matmul(&layer.wo).add_row_broadcast(&layer.bo);
            x = layer_norm_rows(&x.add(&attn), &layer.ln1_gamma, &layer.ln1_beta, eps);
            let ffn = x
                .matmul(&layer.w1)
                .add_row_broadcast(&layer.b1)
                .map(gelu)
                .matmul(&layer.w2)
                .add_row_broadcast(&layer.b2);
            x = layer_norm_rows(&x.add(&ffn), &layer.ln2_gamma, &layer.ln2_beta, eps);
        }
        x
    }

    /// Calls `f` with every trainable tensor in a fixed canonical order.
    pub fn visit_params(&self, f: &mut dyn FnMut(&str, &Matrix<F>)) {
        f("embed.word", &self.word_embed);
        f("embed.pos", &self.pos_embed);
        f("embed.ln.gamma", &self.embed_ln_gamma);
        f("embed.ln.beta", &self.embed_ln_beta);
        for (i, l) in self.layers.iter().enumerate() {
            f(&format!("layer{i}.attn.wq"), &l.wq);
            f(&format!("layer{i}.attn.bq"), &l.bq);
            f(&format!("layer{i}.attn.wk"), &l.wk);
            f(&format!("layer{i}.attn.bk"), &l.bk);
            f(&format!("layer{i}.attn.wv"), &l.wv);
            f(&format!("layer{i}.attn.bv"), &l.bv);
            f(&format!("layer{i}.attn.wo"), &l.wo);
            f(&format!("layer{i}.attn.bo"), &l.bo);
            f(&format!("layer{i}.ln1.gamma"), &l.ln1_gamma);
            f(&format!("layer{i}.ln1.beta"), &l.ln1_beta);
            f(&format!("layer{i}.ffn.w1"), &l.w1);
            f(&format!("layer{i}.ffn.b1"), &l.b1);
            f(&format!("layer{i}.ffn.w2"), &l.w2);
            f(&format!("layer{i}.ffn.b2"), &l.b2);
            f(&format!("layer{i}.ln2.gamma"), &l.ln2_gamma);
            f(&format!("layer{i}.ln2.beta"), &l.ln2_beta);
        }
        f("mlm.w", &self.mlm_w);
        f("mlm.b", &self.mlm_b);
        f("mlm.ln.gamma", &self.mlm_ln_gamma);
        f("mlm.ln.beta", &self.mlm_ln_beta);
        f("mlm.bias", &self.mlm_bias);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Matrix<F>)) {
        f("embed.word", &mut self.word_embed);
        f("embed.pos", &mut self.pos_embed);
        f("embed.ln.gamma", &mut self.embed_ln_gamma);
        f("embed.ln.beta", &mut self.embed_ln_beta);
        for (i, l) in self.layers.iter_mut().enumerate() {
            f(&format!("layer{i}.attn.wq"), &mut l.wq);
            f(&format!("layer{i}.attn.bq"), &mut l.bq);
            f(&format!("layer{i}.attn.wk"), &mut l.wk);
            f(&format!("layer{i}.attn.bk"), &mut l.bk);
            f(&format!("layer{i}.attn.wv"), &mut l.wv);
            f(&format!("layer{i}.attn.bv"), &mut l.bv);
            f(&format!("layer{i}.attn.wo"), &mut l.wo);
            f(&format!("layer{i}.attn.bo"), &mut l.bo);
            f(&format!("layer{i}.ln1.gamma"), &mut l.ln1_gamma);
            f(&format!("layer{i}.ln1.beta"), &mut l.ln1_beta);
            f(&format!("layer{i}.ffn.w1"), &mut l.w1);
            f(&format!("layer{i}.ffn.b1"), &mut l.b1);
            f(&format!("layer{i}.ffn.w2"), &mut l.w2);
            f(&format!("layer{i}.ffn.b2"), &mut l.b2);
            f(&format!("layer{i}.ln2.gamma"), &mut l.ln2_gamma);
            f(&format!("layer{i}.ln2.beta"), &mut l.ln2_beta);
        }
        f("mlm.w", &mut self.mlm_w);
        f("mlm.b", &mut self.mlm_b);
        f("mlm.ln.gamma", &mut self.mlm_ln_gamma);
        f("mlm.ln.beta", &mut self.mlm_ln_beta);
        f("mlm.bias", &mut self.mlm_bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, m| n += m.len());
        n
    }

    /// Registers every parameter on a tape; the returned handle resolves
    /// names to tape nodes.
    pub fn bind(&self, tape: &mut Tape<F>) -> BoundBackbone {
        let mut ids = BTreeMap::new();
        self.visit_params(&mut |name, m| {
            ids.insert(name.to_string(), tape.param(name, m));
        });
        BoundBackbone { ids }
    }

    /// Forward pass on the tape. With `train` set, dropout is applied using
    /// the supplied stream.
    pub fn forward_on_tape(
        &self,
        tape: &mut Tape<F>,
        bound: &BoundBackbone,
        ids: &[u32],
        train: bool,
        rng: &mut Rng,
    ) -> Result<NodeId> {
        self.check_ids(ids)?;
        let d = self.dims.d_h;
        let heads = self.dims.heads;
        let dk = d / heads;
        let eps = self.eps();
        let rate = if train { self.dims.dropout } else { 0.0 };

        let word = tape.embed_rows(bound.id("embed.word"), ids);
        let pos_ids: Vec<u32> = (0..ids.len() as u32).collect();
        let pos = tape.embed_rows(bound.id("embed.pos"), &pos_ids);
        let mut x = tape.add(word, pos);
        x = tape.layer_norm(x, bound.id("embed.ln.gamma"), bound.id("embed.ln.beta"), eps);
        x = tape.dropout(x, rate, rng);

        for i in 0..self.layers.len() {
            let name = |suffix: &str| format!("layer{i}.{suffix}");
            let q0 = tape.matmul(x, bound.id(&name("attn.wq")));
            let q = tape.add_row_broadcast(q0, bound.id(&name("attn.bq")));
            let k0 = tape.matmul(x, bound.id(&name("attn.wk")));
            let k = tape.add_row_broadcast(k0, bound.id(&name("attn.bk")));
            let v0 = tape.matmul(x, bound.id(&name("attn.wv")));
            let v = tape.add_row_broadcast(v0, bound.id(&name("attn.bv")));
            let mut head_outputs = Vec::with_capacity(heads);
            for h in 0..heads {
                let qh = tape.slice_cols(q, h * dk, dk);
                let kh = tape.slice_cols(k, h * dk, dk);
                let vh = tape.slice_cols(v, h * dk, dk);
                let scores = tape.matmul_transpose_b(qh, kh);
                let mut probs = tape.softmax_rows(scores, self.attn_scale());
                probs = tape.dropout(probs, rate, rng);
                head_outputs.push(tape.matmul(probs, vh));
            }
            let concat = tape.concat_cols(&head_outputs);
            let attn0 = tape.matmul(concat, bound.id(&name("attn.wo")));
            let mut attn = tape.add_row_broadcast(attn0, bound.id(&name("attn.bo")));
            attn = tape.dropout(attn, rate, rng);
            let sum1 = tape.add(x, attn);
            x = tape.layer_norm(
                sum1,
                bound.id(&name("ln1.gamma")),
                bound.id(&name("ln1.beta")),
                eps,
            );
            let f0 = tape.matmul(x, bound.id(&name("ffn.w1")));
            let f1 = tape.add_row_broadcast(f0, bound.id(&name("ffn.b1")));
            let f2 = tape.gelu(f1);
            let f3 = tape.matmul(f2, bound.id(&name("ffn.w2")));
            let mut ffn = tape.add_row_broadcast(f3, bound.id(&name("ffn.b2")));
            ffn = tape.dropout(ffn, rate, rng);
            let sum2 = tape.add(x, ffn);
            x = tape.layer_norm(
                sum2,
                bound.id(&name("ln2.gamma")),
                bound.id(&name("ln2.beta")),
                eps,
            );
        }
        Ok(x)
    }

    /// Vocabulary scores for a 1 x d hidden-state node, through the tied
    /// decoder.
    pub fn mlm_on_tape(&self, tape: &mut Tape<F>, bound: &BoundBackbone, h: NodeId) -> NodeId {
        let t0 = tape.matmul(h, bound.id("mlm.w"));
        let t1 = tape.add_row_broadcast(t0, bound.id("mlm.b"));
        let t2 = tape.gelu(t1);
        let t3 = tape.layer_norm(t2, bound.id("mlm.ln.gamma"), bound.id("mlm.ln.beta"), self.eps());
        let logits = tape.matmul_transpose_b(t3, bound.id("embed.word"));
        tape.add_row_broadcast(logits, bound.id("mlm.bias"))
    }
}

pub struct BoundBackbone {
    ids: BTreeMap<String, NodeId>,
}

impl BoundBackbone {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("unbound backbone parameter {name}"))
    }
}

impl<F: Float> PromptTokenizer for TransformerBackbone<F> {
    fn tokenize(&self, text: &str) -> Vec<u32> {
        self.vocab.tokenize(text)
    }

    fn decode(&self, ids: &[u32]) -> Vec<String> {
        self.vocab.decode(ids)
    }

    fn token_id(&self, surface: &str) -> Option<u32> {
        self.vocab.token_id(surface)
    }

    fn mask_token_id(&self) -> u32 {
        self.vocab.mask_id()
    }

    fn begin_token_id(&self) -> u32 {
        self.vocab.cls_id()
    }

    fn end_token_id(&self) -> u32 {
        self.vocab.sep_id()
    }
}

impl<F: Float> Backbone<F> for TransformerBackbone<F> {
    fn hidden_dim(&self) -> usize {
        self.dims.d_h
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    fn encode(&self, ids: &[u32]) -> Result<Matrix<F>> {
        self.check_ids(ids)?;
        Ok(self.forward_eval(ids))
    }

    fn mlm_score(&self, hidden: &[F]) -> Result<Vec<F>> {
        if hidden.len() != self.dims.d_h {
            return Err(Error::DimMismatch {
                context: "mlm_score input".into(),
                expected: self.dims.d_h,
                got: hidden.len(),
            });
        }
        let h = Matrix::row_vector(hidden.to_vec());
        let t = h
            .matmul(&self.mlm_w)
            .add_row_broadcast(&self.mlm_b)
            .map(gelu);
        let t = layer_norm_rows(&t, &self.mlm_ln_gamma, &self.mlm_ln_beta, self.eps());
        let logits = t
            .matmul_transpose_b(&self.word_embed)
            .add_row_broadcast(&self.mlm_bias);
        Ok(logits.as_slice().to_vec())
    }
}
