//! Differentiable forward pass (tape-recorded), used by pretraining and by
//! the projection trainer.

use super::{DecoderLM, LmConfig, LN_EPS};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tape, Tensor, Var};

/// Parameter handles registered on a tape.
pub struct LmVars {
    pub tok_emb: Var,
    pub pos_emb: Var,
    head: Var,
    ln_f: (Var, Var),
    blocks: Vec<BlockVars>,
}

struct BlockVars {
    ln1: (Var, Var),
    wq: Var,
    bq: Var,
    wk: Var,
    bk: Var,
    wv: Var,
    bv: Var,
    wo: Var,
    bo: Var,
    ln2: (Var, Var),
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
}

impl LmVars {
    pub fn register<E: Element>(
        tape: &mut Tape<'_, E>,
        store_idx: usize,
        cfg: &LmConfig,
    ) -> Result<Self> {
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = format!("b{i}");
            blocks.push(BlockVars {
                ln1: (
                    tape.param(store_idx, &format!("{p}.ln1.g"))?,
                    tape.param(store_idx, &format!("{p}.ln1.b"))?,
                ),
                wq: tape.param(store_idx, &format!("{p}.attn.wq"))?,
                bq: tape.param(store_idx, &format!("{p}.attn.bq"))?,
                wk: tape.param(store_idx, &format!("{p}.attn.wk"))?,
                bk: tape.param(store_idx, &format!("{p}.attn.bk"))?,
                wv: tape.param(store_idx, &format!("{p}.attn.wv"))?,
                bv: tape.param(store_idx, &format!("{p}.attn.bv"))?,
                wo: tape.param(store_idx, &format!("{p}.attn.wo"))?,
                bo: tape.param(store_idx, &format!("{p}.attn.bo"))?,
                ln2: (
                    tape.param(store_idx, &format!("{p}.ln2.g"))?,
                    tape.param(store_idx, &format!("{p}.ln2.b"))?,
                ),
                w1: tape.param(store_idx, &format!("{p}.mlp.w1"))?,
                b1: tape.param(store_idx, &format!("{p}.mlp.b1"))?,
                w2: tape.param(store_idx, &format!("{p}.mlp.w2"))?,
                b2: tape.param(store_idx, &format!("{p}.mlp.b2"))?,
            });
        }
        Ok(LmVars {
            tok_emb: tape.param(store_idx, "tok_emb")?,
            pos_emb: tape.param(store_idx, "pos_emb")?,
            head: tape.param(store_idx, "head")?,
            ln_f: (
                tape.param(store_idx, "ln_f.g")?,
                tape.param(store_idx, "ln_f.b")?,
            ),
            blocks,
        })
    }
}

/// Strictly causal mask: position t attends to positions 0..=t.
fn causal_mask<E: Element>(t: usize) -> Tensor<E> {
    let neg = E::fp(-1e9);
    let mut data = vec![E::zero(); t * t];
    for r in 0..t {
        for c in (r + 1)..t {
            data[r * t + c] = neg;
        }
    }
    Tensor::from_vec(&[t, t], data).unwrap()
}

/// Forward through the blocks for pre-assembled input rows `[T×d]` (soft
/// prompts and/or token embeddings, without positions). Returns logits
/// `[T×V]`. `site_base` namespaces the dropout streams of this call.
pub fn forward_var<E: Element>(
    tape: &mut Tape<'_, E>,
    vars: &LmVars,
    cfg: &LmConfig,
    x_rows: Var,
    dropout: f64,
    site_base: u64,
) -> Result<Var> {
    let t = tape.value(x_rows).rows();
    if t > cfg.context_len {
        return Err(Error::Length(format!(
            "sequence of {t} exceeds context {}",
            cfg.context_len
        )));
    }
    
    let dh = cfg.head_dim();
    let scale = E::fp(1.0 / (dh as f64).sqrt());
    let p = dropout;

    let pos = tape.slice_rows(vars.pos_emb, 0, t)?;
    let mut x = tape.add(x_rows, pos)?;
    x = tape.dropout(x, p, site_base)?;

    let mask = tape.constant(causal_mask::<E>(t));
    for (li, b) in vars.blocks.iter().enumerate() {
        let site = site_base + 16 * (li as u64 + 1);
        // attention
        let h = tape.layernorm_lastdim(x, b.ln1.0, b.ln1.1, E::fp(LN_EPS))?;
        let q = tape.matmul(h, b.wq)?;
        let q = tape.add_bias(q, b.bq)?;
        let k = tape.matmul(h, b.wk)?;
        let k = tape.add_bias(k, b.bk)?;
        let v = tape.matmul(h, b.wv)?;
        let v = tape.add_bias(v, b.bv)?;
        let mut attn_out: Option<Var> = None;
        for head in 0..cfg.n_heads {
            let qh = tape.slice_cols(q, head * dh, dh)?;
            let kh = tape.slice_cols(k, head * dh, dh)?;
            let vh = tape.slice_cols(v, head * dh, dh)?;
            let scores = tape.matmul_nt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let scores = tape.add(scores, mask)?;
            let att = tape.softmax_lastdim(scores);
            let att = tape.dropout(att, p, site + head as u64)?;
            let oh = tape.matmul(att, vh)?;
            let wo_h = tape.slice_rows(b.wo, head * dh, dh)?;
            let proj = tape.matmul(oh, wo_h)?;
            attn_out = Some(match attn_out {
                Some(acc) => tape.add(acc, proj)?,
                None => proj,
            });
        }
        let attn = tape.add_bias(attn_out.unwrap(), b.bo)?;
        let attn = tape.dropout(attn, p, site + 8)?;
        x = tape.add(x, attn)?;
        // mlp
        let h2 = tape.layernorm_lastdim(x, b.ln2.0, b.ln2.1, E::fp(LN_EPS))?;
        let m = tape.matmul(h2, b.w1)?;
        let m = tape.add_bias(m, b.b1)?;
        let m = tape.gelu(m);
        let m = tape.matmul(m, b.w2)?;
        let m = tape.add_bias(m, b.b2)?;
        let m = tape.dropout(m, p, site + 9)?;
        x = tape.add(x, m)?;
    }
    let xf = tape.layernorm_lastdim(x, vars.ln_f.0, vars.ln_f.1, E::fp(LN_EPS))?;
    tape.matmul(xf, vars.head)
}

/// Forward for a mixed sequence: optional soft prompts followed by tokens.
pub fn forward_tokens_var<E: Element>(
    tape: &mut Tape<'_, E>,
    vars: &LmVars,
    cfg: &LmConfig,
    prompts: Option<Var>,
    tokens: &[u32],
    dropout: f64,
    site_base: u64,
) -> Result<Var> {
    let tok = tape.embedding(vars.tok_emb, tokens)?;
    let x = match prompts {
        Some(p) => {
            if tape.value(p).cols() != cfg.d_model {
                return Err(Error::Shape(format!(
                    "prompt width {} != d_model {}",
                    tape.value(p).cols(),
                    cfg.d_model
                )));
            }
            tape.concat_rows(p, tok)?
        }
        None => tok,
    };
    forward_var(tape, vars, cfg, x, dropout, site_base)
}

impl<E: Element> DecoderLM<E> {
    /// Convenience: register params and run a token forward on a fresh tape,
    /// returning the cross-entropy loss over the masked positions.
    pub fn loss_on_tape<'a>(
        &'a self,
        tape: &mut Tape<'a, E>,
        tokens: &[u32],
        targets: &[u32],
        mask: &[bool],
        reduction: crate::tensor::Reduction,
    ) -> Result<Var> {
        let vars = LmVars::register(tape, 0, &self.cfg)?;
        let logits = forward_tokens_var(tape, &vars, &self.cfg, None, tokens, self.cfg.dropout, 0)?;
        tape.cross_entropy(logits, targets, mask, reduction)
    }
}
