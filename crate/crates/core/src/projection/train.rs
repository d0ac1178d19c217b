//! Caption-loss trainer for the projection.
//!
//! The training sequence per example is
//!   [prompt rows] "." <caption tokens> <eos>
//! with cross-entropy only on the caption tokens and the eos; prompt
//! positions and the separator contribute no loss terms. Loss is averaged
//! per token across the whole batch.

use super::Projection;
use crate::encoders::EncoderModel;
use crate::error::{Error, Result};
use crate::lm::{forward_var, DecoderLM, LmVars, EOS};
use crate::rng;
use crate::tensor::{clip_global_norm, AdamWConfig, AdamWState, Grads, Reduction, Tape, Tensor};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimberTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    /// Projection learning rate.
    pub lr_p: f64,
    /// Encoder learning rate; required (and only used) when tuning the
    /// encoder alongside the projection.
    pub lr_e: Option<f64>,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub dropout: f64,
    pub grad_clip: f64,
    pub seed: u64,
    pub threads: usize,
    /// Token id of the separator between prompts and caption.
    pub sep_token: u32,
    pub eval_every: usize,
}

impl Default for LimberTrainConfig {
    fn default() -> Self {
        LimberTrainConfig {
            steps: 3000,
            batch_size: 32,
            lr_p: 8e-4,
            lr_e: None,
            betas: (0.9, 0.95),
            weight_decay: 0.0,
            dropout: 0.1,
            grad_clip: 1.0,
            seed: 0,
            threads: 1,
            sep_token: 0,
            eval_every: 100,
        }
    }
}

impl LimberTrainConfig {
    pub fn validate(&self, tuned: bool) -> Result<()> {
        if self.lr_p <= 0.0 {
            return Err(Error::Config("lr_p must be positive".into()));
        }
        if tuned && self.lr_e.is_none() {
            return Err(Error::Config("tuned-encoder mode requires lr_e".into()));
        }
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::Config("steps and batch_size must be positive".into()));
        }
        Ok(())
    }

    fn optim_p(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr_p,
            betas: self.betas,
            weight_decay: self.weight_decay,
            eps: 1e-8,
        }
    }

    fn optim_e(&self) -> AdamWConfig {
        AdamWConfig {
            lr: self.lr_e.unwrap_or(2e-6),
            betas: self.betas,
            weight_decay: self.weight_decay,
            eps: 1e-8,
        }
    }
}

/// Frozen-encoder training pair: precomputed features and caption tokens.
#[derive(Debug, Clone)]
pub struct TrainExample {
    pub features: Tensor,
    pub tokens: Vec<u32>,
}

/// Tuned-encoder training pair: raw observation and caption tokens.
#[derive(Debug, Clone)]
pub struct ObsExample {
    pub obs: Vec<f32>,
    pub tokens: Vec<u32>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub final_loss: f64,
    pub loss_curve: Vec<(u64, f64)>,
    /// Names of every parameter that received updates.
    pub trainable: Vec<String>,
    pub steps_run: u64,
}

/// Optimizer state carried across checkpoint save/load so a resumed run is
/// step-for-step identical to an uninterrupted one.
#[derive(Debug, Clone)]
pub struct ResumeState {
    pub step: u64,
    pub moments: Vec<(String, Vec<f32>, Vec<f32>)>,
}

/// Build the token suffix, aligned targets and loss mask for one example.
fn sequence_parts(tokens: &[u32], k: usize, sep: u32) -> (Vec<u32>, Vec<u32>, Vec<bool>) {
    let mut tok_inputs = Vec::with_capacity(tokens.len() + 1);
    tok_inputs.push(sep);
    tok_inputs.extend_from_slice(tokens);
    let rows = k + tok_inputs.len();
    let mut targets = vec![0u32; rows];
    let mut mask = vec![false; rows];
    for (i, &c) in tokens.iter().enumerate() {
        targets[k + i] = c;
        mask[k + i] = true;
    }
    targets[k + tokens.len()] = EOS;
    mask[k + tokens.len()] = true;
    (tok_inputs, targets, mask)
}

/// One example's forward/backward in frozen mode. `stores` = [proj, lm].
fn frozen_example_pass(
    proj: &Projection,
    lm: &DecoderLM,
    ex: &TrainExample,
    cfg: &LimberTrainConfig,
    step: u64,
    slot: usize,
    inv: f32,
    check_trainable: bool,
) -> Result<(f64, Grads<f32>)> {
    let mut tape = Tape::new(&[&proj.params, &lm.params])
        .train_mode(rng::key(cfg.seed, &[0xd207, slot as u64]), step);
    let feat = tape.constant(ex.features.clone());
    let prompts = proj.project_var(&mut tape, 0, feat)?;
    let vars = LmVars::register(&mut tape, 1, &lm.cfg)?;
    let (tok_inputs, targets, mask) = sequence_parts(&ex.tokens, proj.k, cfg.sep_token);
    let tok = tape.embedding(vars.tok_emb, &tok_inputs)?;
    let rows = tape.concat_rows(prompts, tok)?;
    let logits = forward_var(&mut tape, &vars, &lm.cfg, rows, cfg.dropout, 0)?;
    if check_trainable {
        let trainable = tape.trainable_leaves();
        let expected = proj.trainable_names();
        if trainable != expected {
            return Err(Error::Usage(format!(
                "trainable set {trainable:?} is not exactly the projection {expected:?}"
            )));
        }
    }
    let loss = tape.cross_entropy(logits, &targets, &mask, Reduction::Sum)?;
    let loss_sum = tape.value(loss).item() as f64;
    let grads = tape.backward_scaled(loss, inv)?;
    Ok((loss_sum, grads))
}

/// Train the projection with encoder and LM frozen. These are the only
/// trainable parameters in the run (asserted on the first step).
pub fn train_projection(
    examples: &[TrainExample],
    proj: &mut Projection,
    lm: &DecoderLM,
    cfg: &LimberTrainConfig,
    resume: Option<&ResumeState>,
) -> Result<(TrainReport, ResumeState)> {
    cfg.validate(false)?;
    if examples.is_empty() {
        return Err(Error::Usage("no training examples".into()));
    }
    if !lm.is_frozen() {
        return Err(Error::Usage("LM must be frozen for projection training".into()));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut opt = AdamWState::new(cfg.optim_p(), &proj.params);
    let start_step = match resume {
        Some(r) => {
            opt.restore_moments(&proj.params, r.step, &r.moments)?;
            r.step
        }
        None => 0,
    };
    let mut report = TrainReport {
        trainable: proj.trainable_names(),
        ..TrainReport::default()
    };
    let mut window: Vec<f64> = Vec::new();

    for step in start_step..cfg.steps as u64 {
        let mut r = rng::keyed_rng(cfg.seed, &[0x11b3, step]);
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| r.gen_range(0..examples.len()))
            .collect();
        let total_tokens: usize = batch.iter().map(|&i| examples[i].tokens.len() + 1).sum();
        let inv = 1.0f32 / total_tokens as f32;
        let proj_ref = &*proj;
        let results: Result<Vec<(f64, Grads<f32>)>> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    frozen_example_pass(
                        proj_ref,
                        lm,
                        &examples[i],
                        cfg,
                        step,
                        slot,
                        inv,
                        step == start_step && slot == 0,
                    )
                })
                .collect()
        });
        let results = results?;
        let mut loss_sum = 0.0;
        for (lv, grads) in &results {
            loss_sum += lv;
            grads.apply_to(0, &mut proj.params);
        }
        let mean_loss = loss_sum / total_tokens as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training(format!(
                "projection loss non-finite at step {step}"
            )));
        }
        clip_global_norm(&mut [&mut proj.params], cfg.grad_clip)?;
        opt.step(&mut proj.params)?;
        window.push(mean_loss);
        report.steps_run = step + 1;
        if (step + 1) % cfg.eval_every as u64 == 0 || step + 1 == cfg.steps as u64 {
            let avg = window.iter().sum::<f64>() / window.len() as f64;
            report.loss_curve.push((step + 1, avg));
            window.clear();
        }
    }
    report.final_loss = report.loss_curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
    let resume_out = ResumeState {
        step: report.steps_run,
        moments: opt.moments(&proj.params),
    };
    Ok((report, resume_out))
}

/// Tuned-encoder variant: the encoder trains at `lr_e` alongside the
/// projection; the LM stays frozen. The encoder is re-frozen afterwards.
pub fn train_projection_tuned(
    examples: &[ObsExample],
    proj: &mut Projection,
    encoder: &mut EncoderModel,
    lm: &DecoderLM,
    cfg: &LimberTrainConfig,
) -> Result<TrainReport> {
    cfg.validate(true)?;
    if examples.is_empty() {
        return Err(Error::Usage("no training examples".into()));
    }
    if !lm.is_frozen() {
        return Err(Error::Usage("LM must be frozen for projection training".into()));
    }
    for i in 0..encoder.params.len() {
        encoder.params.tensor_mut(i).set_requires_grad(true);
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let mut opt_p = AdamWState::new(cfg.optim_p(), &proj.params);
    let mut opt_e = AdamWState::new(cfg.optim_e(), &encoder.params);
    let mut report = TrainReport::default();
    let mut window: Vec<f64> = Vec::new();

    for step in 0..cfg.steps as u64 {
        let mut r = rng::keyed_rng(cfg.seed, &[0x11b3, step]);
        let batch: Vec<usize> = (0..cfg.batch_size)
            .map(|_| r.gen_range(0..examples.len()))
            .collect();
        let total_tokens: usize = batch.iter().map(|&i| examples[i].tokens.len() + 1).sum();
        let inv = 1.0f32 / total_tokens as f32;
        let proj_ref = &*proj;
        let enc_ref = &*encoder;
        let results: Result<Vec<(f64, Grads<f32>)>> = pool.install(|| {
            batch
                .par_iter()
                .enumerate()
                .map(|(slot, &i)| {
                    let ex = &examples[i];
                    let mut tape = Tape::new(&[&proj_ref.params, &enc_ref.params, &lm.params])
                        .train_mode(rng::key(cfg.seed, &[0xd207, slot as u64]), step);
                    let obs = tape.constant(Tensor::from_vec(&[1, ex.obs.len()], ex.obs.clone())?);
                    let raw = enc_ref.arch.forward_var(&mut tape, 1, "", obs)?;
                    let feat = match enc_ref.geometry {
                        crate::encoders::FeatureGeometry::Pooled { .. } => raw,
                        crate::encoders::FeatureGeometry::PatchGrid { n_patches, h_patch } => {
                            tape.reshape(raw, &[n_patches, h_patch])?
                        }
                    };
                    let prompts = proj_ref.project_var(&mut tape, 0, feat)?;
                    let vars = LmVars::register(&mut tape, 2, &lm.cfg)?;
                    let (tok_inputs, targets, mask) =
                        sequence_parts(&ex.tokens, proj_ref.k, cfg.sep_token);
                    let tok = tape.embedding(vars.tok_emb, &tok_inputs)?;
                    let rows = tape.concat_rows(prompts, tok)?;
                    let logits = forward_var(&mut tape, &vars, &lm.cfg, rows, cfg.dropout, 0)?;
                    let loss = tape.cross_entropy(logits, &targets, &mask, Reduction::Sum)?;
                    let loss_sum = tape.value(loss).item() as f64;
                    let grads = tape.backward_scaled(loss, inv)?;
                    Ok((loss_sum, grads))
                })
                .collect()
        });
        let results = results?;
        let mut loss_sum = 0.0;
        for (lv, grads) in &results {
            loss_sum += lv;
            grads.apply_to(0, &mut proj.params);
            grads.apply_to(1, &mut encoder.params);
        }
        let mean_loss = loss_sum / total_tokens as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training(format!(
                "tuned projection loss non-finite at step {step}"
            )));
        }
        clip_global_norm(&mut [&mut proj.params, &mut encoder.params], cfg.grad_clip)?;
        opt_p.step(&mut proj.params)?;
        opt_e.step(&mut encoder.params)?;
        window.push(mean_loss);
        report.steps_run = step + 1;
        if (step + 1) % cfg.eval_every as u64 == 0 || step + 1 == cfg.steps as u64 {
            let avg = window.iter().sum::<f64>() / window.len() as f64;
            report.loss_curve.push((step + 1, avg));
            window.clear();
        }
    }
    report.final_loss = report.loss_curve.last().map(|&(_, l)| l).unwrap_or(f64::NAN);
    report.trainable = {
        let mut t = proj.trainable_names();
        t.extend(encoder.params.trainable_names());
        t.sort();
        t
    };
    encoder.freeze();
    Ok(report)
}
