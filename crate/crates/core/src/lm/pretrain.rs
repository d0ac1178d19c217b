//! Next-token pretraining on a packed text stream.

use super::{forward_tokens_var, perplexity, DecoderLM, LmConfig, LmVars, EOS, PAD};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{clip_global_norm, AdamWConfig, AdamWState, Reduction, Tape};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PretrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub optim: AdamWConfig,
    pub grad_clip: f64,
    pub seed: u64,
    /// Worker threads for per-example forward/backward (1 = serial).
    pub threads: usize,
    /// If set, held-out perplexity after training must be below this value.
    pub ppl_gate: Option<f64>,
    pub eval_every: usize,
    /// Dropout used during pretraining (the LM config's dropout applies to
    /// downstream stitch training, not here).
    pub dropout: f64,
    /// Linear warmup steps followed by cosine decay to `final_lr_frac`.
    pub warmup_steps: usize,
    pub final_lr_frac: f64,
}

impl Default for PretrainOptions {
    fn default() -> Self {
        PretrainOptions {
            steps: 1500,
            batch_size: 12,
            optim: AdamWConfig {
                lr: 3e-3,
                ..AdamWConfig::default()
            },
            grad_clip: 1.0,
            seed: 0,
            threads: 1,
            ppl_gate: None,
            eval_every: 250,
            dropout: 0.0,
            warmup_steps: 50,
            final_lr_frac: 1.0,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PretrainReport {
    pub final_train_loss: f64,
    pub val_perplexity: Option<f64>,
    pub loss_curve: Vec<(u64, f64)>,
    pub val_curve: Vec<(u64, f64)>,
}

/// Pack lines (each implicitly EOS-terminated) into context-sized chunks of
/// whole segments. Every chunk starts at a segment boundary.
pub fn pack_corpus(lines: &[Vec<u32>], context_len: usize) -> Vec<Vec<u32>> {
    let mut chunks = Vec::new();
    let mut cur: Vec<u32> = Vec::with_capacity(context_len);
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let mut seg: Vec<u32> = Vec::with_capacity(line.len() + 1);
        seg.extend_from_slice(line);
        seg.push(EOS);
        if seg.len() > context_len {
            seg.truncate(context_len);
        }
        if cur.len() + seg.len() > context_len {
            if !cur.is_empty() {
                chunks.push(std::mem::take(&mut cur));
            }
        }
        cur.extend_from_slice(&seg);
    }
    if !cur.is_empty() {
        chunks.push(cur);
    }
    chunks
}

fn scheduled_lr(opts: &PretrainOptions, step: u64) -> f64 {
    let base = opts.optim.lr;
    let warm = opts.warmup_steps as f64;
    if (step as f64) < warm {
        return base * (step as f64 + 1.0) / warm.max(1.0);
    }
    let total = opts.steps as f64;
    let t = ((step as f64 - warm) / (total - warm).max(1.0)).clamp(0.0, 1.0);
    let floor = base * opts.final_lr_frac;
    floor + 0.5 * (base - floor) * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Train a decoder LM from scratch on `corpus`, freeze it, and verify the
/// optional held-out perplexity gate.
pub fn pretrain_lm(
    corpus: &[Vec<u32>],
    val: &[Vec<u32>],
    cfg: LmConfig,
    opts: &PretrainOptions,
) -> Result<(DecoderLM, PretrainReport)> {
    if corpus.is_empty() {
        return Err(Error::Usage("pretraining corpus is empty".into()));
    }
    cfg.validate()?;
    let mut lm = DecoderLM::<f32>::new(cfg.clone(), rng::derive_seed(opts.seed, "lm-init"))?;
    let chunks = pack_corpus(corpus, cfg.context_len);
    if chunks.is_empty() {
        return Err(Error::Usage("corpus packed to zero chunks".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut opt = AdamWState::new(opts.optim, &lm.params);
    let mut report = PretrainReport::default();
    let mut window = Vec::new();

    for step in 0..opts.steps as u64 {
        let mut r = rng::keyed_rng(opts.seed, &[0xba7c, step]);
        let batch: Vec<usize> = (0..opts.batch_size)
            .map(|_| r.gen_range(0..chunks.len()))
            .collect();
        // Global token count first so every example scales uniformly.
        let total_tokens: usize = batch
            .iter()
            .map(|&ci| {
                let c = &chunks[ci];
                (1..c.len()).filter(|&i| c[i] != PAD).count()
            })
            .sum();
        if total_tokens == 0 {
            continue;
        }
        let inv = 1.0 / total_tokens as f32;
        let params = &lm.params;
        let results: Result<Vec<_>> = pool.install(|| {
            batch
                .par_iter()
                .map(|&ci| {
                    let chunk = &chunks[ci];
                    let inputs = &chunk[..chunk.len() - 1];
                    let targets = &chunk[1..];
                    let mask: Vec<bool> = targets.iter().map(|&t| t != PAD).collect();
                    let mut tape = Tape::new(&[params])
                        .train_mode(rng::key(opts.seed, &[0xd0, ci as u64]), step);
                    let vars = LmVars::register(&mut tape, 0, &cfg)?;
                    let logits = forward_tokens_var(&mut tape, &vars, &cfg, None, inputs, opts.dropout, 0)?;
                    let loss = tape.cross_entropy(logits, targets, &mask, Reduction::Sum)?;
                    let loss_val = tape.value(loss).item();
                    let grads = tape.backward_scaled(loss, inv)?;
                    Ok((loss_val as f64, grads))
                })
                .collect()
        });
        let results = results?;
        let mut loss_sum = 0.0;
        for (lv, grads) in &results {
            loss_sum += lv;
            grads.apply_to(0, &mut lm.params);
        }
        let mean_loss = loss_sum / total_tokens as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training(format!(
                "loss became non-finite at step {step}"
            )));
        }
        clip_global_norm(&mut [&mut lm.params], opts.grad_clip)?;
        opt.cfg.lr = scheduled_lr(opts, step);
        opt.step(&mut lm.params)?;
        window.push(mean_loss);
        if (step + 1) % opts.eval_every as u64 == 0 || step + 1 == opts.steps as u64 {
            let avg = window.iter().sum::<f64>() / window.len() as f64;
            report.loss_curve.push((step + 1, avg));
            window.clear();
            if !val.is_empty() {
                let ppl = perplexity(&lm, val)?;
                report.val_curve.push((step + 1, ppl));
            }
        }
    }
    report.final_train_loss = report.loss_curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
    lm.freeze();
    if !val.is_empty() {
        let ppl = perplexity(&lm, val)?;
        report.val_perplexity = Some(ppl);
        if let Some(gate) = opts.ppl_gate {
            if ppl > gate {
                return Err(Error::Training(format!(
                    "held-out perplexity {ppl:.3} above gate {gate:.3}"
                )));
            }
        }
    }
    Ok((lm, report))
}
