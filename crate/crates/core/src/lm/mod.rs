//! Miniature GPT-style causal language model.
//!
//! The model accepts mixed input sequences: the leading positions may be
//! continuous soft-prompt vectors that bypass the token embedding, the rest
//! are ordinary tokens. Once pretrained it is frozen (verified by content
//! hash) and shared read-only by every downstream stage.

mod forward;
mod infer;
mod pretrain;
mod vocab;

pub use forward::{forward_tokens_var, forward_var, LmVars};
pub use infer::{forward_mixed, generate, input_rows, perplexity, DecodeMode, KvCache};
pub use pretrain::{pretrain_lm, PretrainOptions, PretrainReport};
pub use vocab::{split_tokens, Vocabulary, BOS, EOS, PAD, UNK};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{init, Element, ParamStore, Tensor};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LmConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub context_len: usize,
    pub vocab_size: usize,
    pub dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        LmConfig {
            d_model: 64,
            n_layers: 2,
            n_heads: 4,
            d_ff: 256,
            context_len: 64,
            vocab_size: 0,
            dropout: 0.1,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be set".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Decoder-only transformer: token + learned positional embeddings,
/// pre-norm blocks, final layer norm, untied LM head.
#[derive(Debug, Clone)]
pub struct DecoderLM<E: Element = f32> {
    pub cfg: LmConfig,
    pub params: ParamStore<E>,
}

pub(crate) const LN_EPS: f64 = 1e-5;

impl<E: Element> DecoderLM<E> {
    pub fn new(cfg: LmConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::rng(seed);
        let mut p = ParamStore::new();
        let d = cfg.d_model;
        let v = cfg.vocab_size;
        p.insert("tok_emb", init::normal(&mut r, &[v, d], 0.02));
        p.insert("pos_emb", init::normal(&mut r, &[cfg.context_len, d], 0.01));
        for i in 0..cfg.n_layers {
            let pre = format!("b{i}");
            p.insert(&format!("{pre}.ln1.g"), Tensor::filled(&[d], E::one()));
            p.insert(&format!("{pre}.ln1.b"), Tensor::zeros(&[d]));
            for w in ["wq", "wk", "wv", "wo"] {
                p.insert(&format!("{pre}.attn.{w}"), init::fan_in(&mut r, d, &[d, d]));
            }
            for b in ["bq", "bk", "bv", "bo"] {
                p.insert(&format!("{pre}.attn.{b}"), Tensor::zeros(&[d]));
            }
            p.insert(&format!("{pre}.ln2.g"), Tensor::filled(&[d], E::one()));
            p.insert(&format!("{pre}.ln2.b"), Tensor::zeros(&[d]));
            p.insert(&format!("{pre}.mlp.w1"), init::fan_in(&mut r, d, &[d, cfg.d_ff]));
            p.insert(&format!("{pre}.mlp.b1"), Tensor::zeros(&[cfg.d_ff]));
            p.insert(&format!("{pre}.mlp.w2"), init::fan_in(&mut r, cfg.d_ff, &[cfg.d_ff, d]));
            p.insert(&format!("{pre}.mlp.b2"), Tensor::zeros(&[d]));
        }
        p.insert("ln_f.g", Tensor::filled(&[d], E::one()));
        p.insert("ln_f.b", Tensor::zeros(&[d]));
        // Zero-init head: an untrained model scores exactly uniform.
        p.insert("head", Tensor::zeros(&[d, v]));
        Ok(DecoderLM { cfg, params: p })
    }

    pub fn freeze(&mut self) {
        self.params.freeze_all();
    }

    pub fn is_frozen(&self) -> bool {
        self.params.trainable_names().is_empty()
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    /// Embedding rows for the given token ids (no positional component).
    pub fn embed_tokens(&self, ids: &[u32]) -> Result<Tensor<E>> {
        let table = self.params.get("tok_emb")?;
        let d = table.cols();
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            if id as usize >= table.rows() {
                return Err(Error::Usage(format!("token id {id} out of range")));
            }
            data.extend_from_slice(table.row(id as usize));
        }
        Tensor::from_vec(&[ids.len(), d], data)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()>
    where
        E: Element,
    {
        let mut c = crate::io::Container::new();
        for (name, t) in self.params.iter() {
            c.insert(name, t.to_f32());
        }
        c.insert(
            "cfg",
            Tensor::from_vec(
                &[6],
                vec![
                    self.cfg.d_model as f32,
                    self.cfg.n_layers as f32,
                    self.cfg.n_heads as f32,
                    self.cfg.d_ff as f32,
                    self.cfg.context_len as f32,
                    self.cfg.dropout as f32,
                ],
            )?,
        );
        c.save(path)
    }
}

impl DecoderLM<f32> {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let c = crate::io::Container::load(path)?;
        let meta = c.get("cfg")?.data().to_vec();
        let vocab_size = c.get("tok_emb")?.rows();
        let cfg = LmConfig {
            d_model: meta[0] as usize,
            n_layers: meta[1] as usize,
            n_heads: meta[2] as usize,
            d_ff: meta[3] as usize,
            context_len: meta[4] as usize,
            vocab_size,
            dropout: meta[5] as f64,
        };
        let mut lm = DecoderLM::new(cfg, 0)?;
        for (name, _) in lm.params.clone().iter() {
            let t = c.get(name)?;
            *lm.params.get_mut(name)? = t.clone();
        }
        lm.freeze();
        Ok(lm)
    }
}
