//! Tape-free inference: full forward, incremental decoding with a KV cache,
//! generation, and corpus perplexity.
//!
//! The full forward applies the same kernels in the same order as the
//! recorded forward, so its logits are bit-identical to the training path
//! in eval mode.

use super::{DecoderLM, LN_EPS, EOS, PAD};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Element, Tensor};
use crate::tensor::{add_bias_rows, layernorm_rows, matmul, matmul_nt, scale_shift_rows, softmax_rows};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Decoding mode for generation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum DecodeMode {
    Greedy,
    TopK { k: usize, temperature: f64 },
}

/// Assemble input rows for a mixed sequence: prompt vectors first, then
/// token embeddings. Positional embeddings are added by the forward pass.
pub fn input_rows<E: Element>(
    lm: &DecoderLM<E>,
    prompts: Option<&Tensor<E>>,
    tokens: &[u32],
) -> Result<Tensor<E>> {
    let tok = lm.embed_tokens(tokens)?;
    match prompts {
        None => Ok(tok),
        Some(p) => {
            if p.cols() != lm.cfg.d_model {
                return Err(Error::Shape(format!(
                    "prompt width {} != d_model {}",
                    p.cols(),
                    lm.cfg.d_model
                )));
            }
            let mut data = Vec::with_capacity((p.rows() + tok.rows()) * p.cols());
            data.extend_from_slice(p.data());
            data.extend_from_slice(tok.data());
            Tensor::from_vec(&[p.rows() + tok.rows(), p.cols()], data)
        }
    }
}

fn ln<E: Element>(x: &Tensor<E>, g: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (normed, _) = layernorm_rows(x, E::fp(LN_EPS));
    scale_shift_rows(&normed, g.data(), b.data())
}

fn slice_cols<E: Element>(x: &Tensor<E>, start: usize, len: usize) -> Tensor<E> {
    let rows = x.rows();
    let mut data = Vec::with_capacity(rows * len);
    for r in 0..rows {
        data.extend_from_slice(&x.row(r)[start..start + len]);
    }
    Tensor::from_vec(&[rows, len], data).unwrap()
}

fn slice_rows<E: Element>(x: &Tensor<E>, start: usize, len: usize) -> Tensor<E> {
    let cols = x.cols();
    Tensor::from_vec(&[len, cols], x.data()[start * cols..(start + len) * cols].to_vec()).unwrap()
}

fn add_t<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let mut out = a.clone();
    for (o, &v) in out.data_mut().iter_mut().zip(b.data()) {
        *o = *o + v;
    }
    out
}

/// Per-layer key/value cache for incremental decoding.
pub struct KvCache<E: Element = f32> {
    k: Vec<Tensor<E>>,
    v: Vec<Tensor<E>>,
    len: usize,
}

impl<E: Element> KvCache<E> {
    fn new(n_layers: usize, d: usize) -> Self {
        KvCache {
            k: (0..n_layers).map(|_| Tensor::zeros(&[0, d])).collect(),
            v: (0..n_layers).map(|_| Tensor::zeros(&[0, d])).collect(),
            len: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    fn append(&mut self, layer: usize, k_rows: &Tensor<E>, v_rows: &Tensor<E>) {
        let d = k_rows.cols();
        let mut k_data = self.k[layer].data().to_vec();
        let mut v_data = self.v[layer].data().to_vec();
        k_data.extend_from_slice(k_rows.data());
        v_data.extend_from_slice(v_rows.data());
        let rows = k_data.len() / d;
        self.k[layer] = Tensor::from_vec(&[rows, d], k_data).unwrap();
        self.v[layer] = Tensor::from_vec(&[rows, d], v_data).unwrap();
    }
}

/// Full forward for a mixed sequence; returns logits `[T×V]`.
pub fn forward_mixed<E: Element>(
    lm: &DecoderLM<E>,
    prompts: Option<&Tensor<E>>,
    tokens: &[u32],
) -> Result<Tensor<E>> {
    let rows = input_rows(lm, prompts, tokens)?;
    forward_rows(lm, &rows, None)
}

/// Full forward over pre-assembled rows; optionally records K/V per layer
/// into `cache` (prefill for incremental decoding).
pub fn forward_rows<E: Element>(
    lm: &DecoderLM<E>,
    x_rows: &Tensor<E>,
    mut cache: Option<&mut KvCache<E>>,
) -> Result<Tensor<E>> {
    let cfg = &lm.cfg;
    let t = x_rows.rows();
    if t > cfg.context_len {
        return Err(Error::Length(format!(
            "sequence of {t} exceeds context {}",
            cfg.context_len
        )));
    }
    if t == 0 {
        return Err(Error::Usage("empty sequence".into()));
    }
    let p = &lm.params;
    let dh = cfg.head_dim();
    let scale = E::fp(1.0 / (dh as f64).sqrt());
    let neg = E::fp(-1e9);

    let pos = slice_rows(p.get("pos_emb")?, 0, t);
    let mut x = add_t(x_rows, &pos);

    for li in 0..cfg.n_layers {
        let pre = format!("b{li}");
        let h = ln(&x, p.get(&format!("{pre}.ln1.g"))?, p.get(&format!("{pre}.ln1.b"))?);
        let q = add_bias_rows(&matmul(&h, p.get(&format!("{pre}.attn.wq"))?), p.get(&format!("{pre}.attn.bq"))?.data());
        let k = add_bias_rows(&matmul(&h, p.get(&format!("{pre}.attn.wk"))?), p.get(&format!("{pre}.attn.bk"))?.data());
        let v = add_bias_rows(&matmul(&h, p.get(&format!("{pre}.attn.wv"))?), p.get(&format!("{pre}.attn.bv"))?.data());
        if let Some(c) = cache.as_deref_mut() {
            c.append(li, &k, &v);
        }
        let wo = p.get(&format!("{pre}.attn.wo"))?;
        let mut attn_out: Option<Tensor<E>> = None;
        for head in 0..cfg.n_heads {
            let qh = slice_cols(&q, head * dh, dh);
            let kh = slice_cols(&k, head * dh, dh);
            let vh = slice_cols(&v, head * dh, dh);
            let mut scores = matmul_nt(&qh, &kh);
            {
                let data = scores.data_mut();
                for r in 0..t {
                    for c in 0..t {
                        let idx = r * t + c;
                        data[idx] = data[idx] * scale;
                        if c > r {
                            data[idx] = data[idx] + neg;
                        }
                    }
                }
            }
            let att = softmax_rows(&scores);
            let oh = matmul(&att, &vh);
            let proj = matmul(&oh, &slice_rows(wo, head * dh, dh));
            attn_out = Some(match attn_out {
                Some(acc) => add_t(&acc, &proj),
                None => proj,
            });
        }
        let attn = add_bias_rows(&attn_out.unwrap(), p.get(&format!("{pre}.attn.bo"))?.data());
        x = add_t(&x, &attn);
        let h2 = ln(&x, p.get(&format!("{pre}.ln2.g"))?, p.get(&format!("{pre}.ln2.b"))?);
        let mut m = add_bias_rows(&matmul(&h2, p.get(&format!("{pre}.mlp.w1"))?), p.get(&format!("{pre}.mlp.b1"))?.data());
        m.data_mut().iter_mut().for_each(|v| *v = crate::tensor::gelu_val(*v));
        let m = add_bias_rows(&matmul(&m, p.get(&format!("{pre}.mlp.w2"))?), p.get(&format!("{pre}.mlp.b2"))?.data());
        x = add_t(&x, &m);
    }
    let xf = ln(&x, p.get("ln_f.g")?, p.get("ln_f.b")?);
    Ok(matmul(&xf, p.get("head")?))
}

/// One incremental decode step: `row` is the un-positioned input row of the
/// next position; returns its logits.
fn step_row<E: Element>(lm: &DecoderLM<E>, cache: &mut KvCache<E>, row: &Tensor<E>) -> Result<Tensor<E>> {
    let cfg = &lm.cfg;
    let pos_idx = cache.len;
    if pos_idx >= cfg.context_len {
        return Err(Error::Length(format!(
            "position {pos_idx} exceeds context {}",
            cfg.context_len
        )));
    }
    let p = &lm.params;
    let dh = cfg.head_dim();
    let scale = E::fp(1.0 / (dh as f64).sqrt());
    let pos = slice_rows(p.get("pos_emb")?, pos_idx, 1);
    let mut x = add_t(row, &pos);
    for li in 0..cfg.n_layers {
        let pre = format!("b{li}");
        let h = ln(&x, p.get(&format!("{pre}.ln1.g"))?, p.get(&format!("{pre}.ln1.b"))?);
        let q = add_bias_rows(&matmul(&h, p.get(&format!("{pre}.attn.wq"))?), p.get(&format!("{pre}.attn.bq"))?.data());
        let k = add_bias_rows(&matmul(&h, p.get(&format!("{pre}.attn.wk"))?), p.get(&format!("{pre}.attn.bk"))?.data());
        let v = add_bias_rows(&matmul(&h, p.get(&format!("{pre}.attn.wv"))?), p.get(&format!("{pre}.attn.bv"))?.data());
        cache.append(li, &k, &v);
        let k_all = &cache.k[li];
        let v_all = &cache.v[li];
        let wo = p.get(&format!("{pre}.attn.wo"))?;
        let mut attn_out: Option<Tensor<E>> = None;
        for head in 0..cfg.n_heads {
            let qh = slice_cols(&q, head * dh, dh);
            let kh = slice_cols(k_all, head * dh, dh);
            let vh = slice_cols(v_all, head * dh, dh);
            let mut scores = matmul_nt(&qh, &kh);
            scores.data_mut().iter_mut().for_each(|s| *s = *s * scale);
            let att = softmax_rows(&scores);
            let oh = matmul(&att, &vh);
            let proj = matmul(&oh, &slice_rows(wo, head * dh, dh));
            attn_out = Some(match attn_out {
                Some(acc) => add_t(&acc, &proj),
                None => proj,
            });
        }
        let attn = add_bias_rows(&attn_out.unwrap(), p.get(&format!("{pre}.attn.bo"))?.data());
        x = add_t(&x, &attn);
        let h2 = ln(&x, p.get(&format!("{pre}.ln2.g"))?, p.get(&format!("{pre}.ln2.b"))?);
        let mut m = add_bias_rows(&matmul(&h2, p.get(&format!("{pre}.mlp.w1"))?), p.get(&format!("{pre}.mlp.b1"))?.data());
        m.data_mut().iter_mut().for_each(|v| *v = crate::tensor::gelu_val(*v));
        let m = add_bias_rows(&matmul(&m, p.get(&format!("{pre}.mlp.w2"))?), p.get(&format!("{pre}.mlp.b2"))?.data());
        x = add_t(&x, &m);
    }
    let xf = ln(&x, p.get("ln_f.g")?, p.get("ln_f.b")?);
    Ok(matmul(&xf, p.get("head")?))
}

fn pick_token<E: Element>(logits: &[E], mode: DecodeMode, r: &mut rand_chacha::ChaCha8Rng) -> u32 {
    match mode {
        DecodeMode::Greedy => {
            let mut best = 0usize;
            for (i, &v) in logits.iter().enumerate() {
                if v > logits[best] {
                    best = i;
                }
            }
            best as u32
        }
        DecodeMode::TopK { k, temperature } => {
            let k = k.max(1).min(logits.len());
            let mut idx: Vec<usize> = (0..logits.len()).collect();
            idx.sort_by(|&a, &b| logits[b].partial_cmp(&logits[a]).unwrap().then(a.cmp(&b)));
            idx.truncate(k);
            let tau = temperature.max(1e-6);
            let mx = logits[idx[0]].to_f64c();
            let weights: Vec<f64> = idx
                .iter()
                .map(|&i| ((logits[i].to_f64c() - mx) / tau).exp())
                .collect();
            let total: f64 = weights.iter().sum();
            let mut draw = r.gen::<f64>() * total;
            for (i, w) in idx.iter().zip(&weights) {
                if draw < *w {
                    return *i as u32;
                }
                draw -= w;
            }
            *idx.last().unwrap() as u32
        }
    }
}

/// Generate up to `max_len` tokens after the given prefix, stopping at EOS.
/// Greedy decoding is fully deterministic; sampling is seed-deterministic.
pub fn generate<E: Element>(
    lm: &DecoderLM<E>,
    prompts: Option<&Tensor<E>>,
    prefix_ids: &[u32],
    mode: DecodeMode,
    max_len: usize,
    seed: u64,
) -> Result<Vec<u32>> {
    let rows = input_rows(lm, prompts, prefix_ids)?;
    if rows.rows() + max_len > lm.cfg.context_len {
        return Err(Error::Length(format!(
            "prefix {} + max_len {max_len} exceeds context {}",
            rows.rows(),
            lm.cfg.context_len
        )));
    }
    if max_len == 0 {
        return Ok(Vec::new());
    }
    let mut cache = KvCache::new(lm.cfg.n_layers, lm.cfg.d_model);
    let logits = forward_rows(lm, &rows, Some(&mut cache))?;
    cache.len = rows.rows();
    let mut r = rng::keyed_rng(seed, &[0x9e2e]);
    let last = slice_rows(&logits, logits.rows() - 1, 1);
    let mut next = pick_token(last.data(), mode, &mut r);
    let mut out = Vec::new();
    loop {
        if next == EOS {
            break;
        }
        out.push(next);
        if out.len() >= max_len {
            break;
        }
        let row = lm.embed_tokens(&[next])?;
        let logits = step_row(lm, &mut cache, &row)?;
        cache.len += 1;
        next = pick_token(logits.data(), mode, &mut r);
    }
    Ok(out)
}

/// exp of the mean token negative log-likelihood over the corpus. Each line
/// is scored standalone from position 0; PAD targets are excluded.
pub fn perplexity<E: Element>(lm: &DecoderLM<E>, lines: &[Vec<u32>]) -> Result<f64> {
    if lines.is_empty() || lines.iter().all(|l| l.is_empty()) {
        return Err(Error::Usage("perplexity of an empty corpus".into()));
    }
    let mut total_nll = 0.0f64;
    let mut total_tokens = 0usize;
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let logits = forward_mixed(lm, None, line)?;
        let probs = softmax_rows(&logits);
        for i in 0..line.len() {
            let target = if i + 1 < line.len() { line[i + 1] } else { EOS };
            if target == PAD {
                continue;
            }
            let p = probs.row(i)[target as usize].to_f64c().max(1e-30);
            total_nll -= p.ln();
            total_tokens += 1;
        }
    }
    Ok((total_nll / total_tokens as f64).exp())
}
