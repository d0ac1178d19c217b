//! Pretraining for the encoder variants.
//!
//! Label isolation is structural: the ssl pretrainer's signature accepts
//! observations only, and the random encoder is never trained at all.

use super::{Act, EncoderKind, EncoderModel, FeatureGeometry, MlpArch};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{clip_global_norm, AdamWConfig, AdamWState, ParamStore, Reduction, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierConfig {
    pub input_dim: usize,
    pub h_i: usize,
    pub hidden: Vec<usize>,
    pub prompt_len: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Held-out accuracy the trained encoder must reach.
    pub accuracy_gate: Option<f64>,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        ClassifierConfig {
            input_dim: 72,
            h_i: 48,
            hidden: vec![96],
            prompt_len: 2,
            steps: 700,
            batch_size: 64,
            lr: 1e-3,
            grad_clip: 1.0,
            accuracy_gate: Some(0.9),
        }
    }
}

/// Supervised category-classification pretraining; returns the frozen
/// encoder (the head is discarded) and the held-out accuracy.
pub fn pretrain_encoder_classifier(
    train: &[(Vec<f32>, usize)],
    val: &[(Vec<f32>, usize)],
    n_classes: usize,
    cfg: &ClassifierConfig,
    seed: u64,
) -> Result<(EncoderModel, f64)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("classifier pretraining needs data".into()));
    }
    let arch = MlpArch {
        input_dim: cfg.input_dim,
        hidden: cfg.hidden.clone(),
        output_dim: cfg.h_i,
        activation: Act::Gelu,
        init_gain: 1.0,
    };
    let mut params = ParamStore::new();
    arch.init_params(rng::derive_seed(seed, "classifier-backbone"), &mut params, "");
    {
        let mut r = rng::rng(rng::derive_seed(seed, "classifier-head"));
        params.insert(
            "head.w",
            crate::tensor::init::fan_in(&mut r, cfg.h_i, &[cfg.h_i, n_classes]),
        );
        params.insert("head.b", Tensor::zeros(&[n_classes]));
    }
    let mut opt = AdamWState::new(
        AdamWConfig {
            lr: cfg.lr,
            ..AdamWConfig::default()
        },
        &params,
    );
    for step in 0..cfg.steps as u64 {
        let mut r = rng::keyed_rng(seed, &[0xc1a5, step]);
        let idx: Vec<usize> = (0..cfg.batch_size).map(|_| r.gen_range(0..train.len())).collect();
        let mut xdata = Vec::with_capacity(cfg.batch_size * cfg.input_dim);
        let mut labels = Vec::with_capacity(cfg.batch_size);
        for &i in &idx {
            xdata.extend_from_slice(&train[i].0);
            labels.push(train[i].1 as u32);
        }
        let x = Tensor::from_vec(&[cfg.batch_size, cfg.input_dim], xdata)?;
        let mut tape = Tape::new(&[&params]);
        let xv = tape.constant(x);
        let feat = arch.forward_var(&mut tape, 0, "", xv)?;
        let hw = tape.param(0, "head.w")?;
        let hb = tape.param(0, "head.b")?;
        let logits = tape.matmul(feat, hw)?;
        let logits = tape.add_bias(logits, hb)?;
        let mask = vec![true; cfg.batch_size];
        let loss = tape.cross_entropy(logits, &labels, &mask, Reduction::Mean)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Training(format!("classifier loss NaN at step {step}")));
        }
        let grads = tape.backward(loss)?;
        grads.apply_to(0, &mut params);
        clip_global_norm(&mut [&mut params], cfg.grad_clip)?;
        opt.step(&mut params)?;
    }
    // Held-out accuracy with the full network, then drop the head.
    let mut correct = 0usize;
    for (obs, label) in val {
        let x = Tensor::from_vec(&[1, cfg.input_dim], obs.clone())?;
        let feat = arch.forward_infer(&params, "", &x)?;
        let logits = crate::tensor::add_bias_rows(
            &crate::tensor::matmul(&feat, params.get("head.w")?),
            params.get("head.b")?.data(),
        );
        let pred = argmax(logits.data());
        if pred == *label {
            correct += 1;
        }
    }
    let acc = correct as f64 / val.len() as f64;
    if let Some(gate) = cfg.accuracy_gate {
        if acc < gate {
            return Err(Error::Training(format!(
                "classifier held-out accuracy {acc:.3} below gate {gate:.3}"
            )));
        }
    }
    let mut backbone = ParamStore::new();
    for (name, t) in params.iter() {
        if !name.starts_with("head.") {
            backbone.insert_raw(name, t.clone());
        }
    }
    backbone.freeze_all();
    let model = EncoderModel {
        kind: EncoderKind::Classifier,
        arch,
        geometry: FeatureGeometry::Pooled { h_i: cfg.h_i },
        prompt_len: cfg.prompt_len,
        params: backbone,
    };
    Ok((model, acc))
}

fn argmax(v: &[f32]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContrastiveConfig {
    pub input_dim: usize,
    pub h_i: usize,
    pub hidden: Vec<usize>,
    pub prompt_len: usize,
    /// Shared embedding dimensionality of both towers.
    pub embed_dim: usize,
    /// Text-side word embedding width.
    pub text_dim: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
    /// Held-out batch-of-`batch_size` retrieval R@1 the towers must reach.
    pub retrieval_gate: Option<f64>,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            input_dim: 72,
            h_i: 64,
            hidden: vec![96],
            prompt_len: 4,
            embed_dim: 32,
            text_dim: 32,
            steps: 900,
            batch_size: 64,
            lr: 1e-3,
            grad_clip: 1.0,
            retrieval_gate: Some(0.7),
        }
    }
}

/// The trained pair of towers, kept for the contrastive-score metric.
#[derive(Debug, Clone)]
pub struct ContrastiveTowers {
    pub img_head: MlpArch,
    pub text_mlp: MlpArch,
    pub text_dim: usize,
    pub params: ParamStore,
}

impl ContrastiveTowers {
    /// Project pooled image features `[1×h_i]` into the shared space.
    pub fn embed_image(&self, features: &Tensor) -> Result<Tensor> {
        let e = self.img_head.forward_infer(&self.params, "img.", features)?;
        Ok(l2norm_rows_infer(&e))
    }

    /// Embed a caption (token ids) into the shared space.
    pub fn embed_text(&self, tokens: &[u32]) -> Result<Tensor> {
        if tokens.is_empty() {
            return Err(Error::Usage("empty caption".into()));
        }
        let table = self.params.get("txt.emb")?;
        let d = table.cols();
        let mut mean = vec![0.0f32; d];
        for &id in tokens {
            if id as usize >= table.rows() {
                return Err(Error::Usage(format!("token id {id} out of range")));
            }
            for (m, &v) in mean.iter_mut().zip(table.row(id as usize)) {
                *m += v;
            }
        }
        let inv = 1.0 / tokens.len() as f32;
        mean.iter_mut().for_each(|v| *v *= inv);
        let x = Tensor::from_vec(&[1, d], mean)?;
        let e = self.text_mlp.forward_infer(&self.params, "txt.", &x)?;
        Ok(l2norm_rows_infer(&e))
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    pub fn save(&self, base: impl AsRef<std::path::Path>) -> Result<()> {
        let base = base.as_ref();
        #[derive(Serialize)]
        struct Meta<'a> {
            img_head: &'a MlpArch,
            text_mlp: &'a MlpArch,
            text_dim: usize,
        }
        std::fs::write(
            base.with_extension("json"),
            serde_json::to_string_pretty(&Meta {
                img_head: &self.img_head,
                text_mlp: &self.text_mlp,
                text_dim: self.text_dim,
            })?,
        )?;
        let mut c = crate::io::Container::new();
        for (name, t) in self.params.iter() {
            c.insert(name, t.clone());
        }
        c.save(base.with_extension("limb"))
    }

    pub fn load(base: impl AsRef<std::path::Path>) -> Result<Self> {
        let base = base.as_ref();
        #[derive(Deserialize)]
        struct Meta {
            img_head: MlpArch,
            text_mlp: MlpArch,
            text_dim: usize,
        }
        let meta: Meta =
            serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
        let c = crate::io::Container::load(base.with_extension("limb"))?;
        let mut params = ParamStore::new();
        for name in c.names() {
            params.insert_raw(name, c.get(name)?.clone());
        }
        params.freeze_all();
        Ok(ContrastiveTowers {
            img_head: meta.img_head,
            text_mlp: meta.text_mlp,
            text_dim: meta.text_dim,
            params,
        })
    }
}

fn l2norm_rows_infer(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    let cols = out.cols();
    for row in out.data_mut().chunks_mut(cols) {
        let n = row.iter().map(|v| v * v).sum::<f32>().sqrt().max(1e-12);
        row.iter_mut().for_each(|v| *v /= n);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContrastiveReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub r_at_1: f64,
}

/// Symmetric InfoNCE over (observation, caption) pairs with a learned
/// temperature; returns the frozen backbone encoder, the tower pair, and a
/// report with the held-out batch retrieval R@1.
pub fn pretrain_encoder_contrastive(
    train: &[(Vec<f32>, Vec<u32>)],
    val: &[(Vec<f32>, Vec<u32>)],
    vocab_size: usize,
    cfg: &ContrastiveConfig,
    seed: u64,
) -> Result<(EncoderModel, ContrastiveTowers, ContrastiveReport)> {
    if cfg.batch_size < 2 {
        return Err(Error::Config("contrastive batch size must be >= 2".into()));
    }
    if train.len() < cfg.batch_size || val.len() < cfg.batch_size {
        return Err(Error::Usage("not enough pairs for contrastive batches".into()));
    }
    let backbone = MlpArch {
        input_dim: cfg.input_dim,
        hidden: cfg.hidden.clone(),
        output_dim: cfg.h_i,
        activation: Act::Gelu,
        init_gain: 1.0,
    };
    let img_head = MlpArch {
        input_dim: cfg.h_i,
        hidden: vec![],
        output_dim: cfg.embed_dim,
        activation: Act::Gelu,
        init_gain: 1.0,
    };
    let text_mlp = MlpArch {
        input_dim: cfg.text_dim,
        hidden: vec![cfg.text_dim * 2],
        output_dim: cfg.embed_dim,
        activation: Act::Gelu,
        init_gain: 1.0,
    };
    let mut params = ParamStore::new();
    backbone.init_params(rng::derive_seed(seed, "ctr-backbone"), &mut params, "");
    img_head.init_params(rng::derive_seed(seed, "ctr-img-head"), &mut params, "img.");
    text_mlp.init_params(rng::derive_seed(seed, "ctr-txt-mlp"), &mut params, "txt.");
    {
        let mut r = rng::rng(rng::derive_seed(seed, "ctr-txt-emb"));
        params.insert(
            "txt.emb",
            crate::tensor::init::normal(&mut r, &[vocab_size, cfg.text_dim], 0.05),
        );
        // exp(2.659) ~ 1/0.07, the usual starting temperature.
        params.insert("logit_scale", Tensor::scalar(2.659f32));
    }
    let mut opt = AdamWState::new(
        AdamWConfig {
            lr: cfg.lr,
            ..AdamWConfig::default()
        },
        &params,
    );
    let mut report = ContrastiveReport {
        initial_loss: f64::NAN,
        final_loss: f64::NAN,
        r_at_1: 0.0,
    };
    let b = cfg.batch_size;
    for step in 0..cfg.steps as u64 {
        let mut r = rng::keyed_rng(seed, &[0xc072, step]);
        let idx: Vec<usize> = (0..b).map(|_| r.gen_range(0..train.len())).collect();
        let mut xdata = Vec::with_capacity(b * cfg.input_dim);
        for &i in &idx {
            xdata.extend_from_slice(&train[i].0);
        }
        let x = Tensor::from_vec(&[b, cfg.input_dim], xdata)?;

        let mut tape = Tape::new(&[&params]);
        let xv = tape.constant(x);
        let feat = backbone.forward_var(&mut tape, 0, "", xv)?;
        let img_e = img_head.forward_var(&mut tape, 0, "img.", feat)?;
        let img_e = tape.l2_normalize_rows(img_e);

        let emb_table = tape.param(0, "txt.emb")?;
        let mut txt_rows: Option<Var> = None;
        for &i in &idx {
            let ids = &train[i].1;
            let e = tape.embedding(emb_table, ids)?;
            let m = tape.mean_rows(e);
            txt_rows = Some(match txt_rows {
                Some(acc) => tape.concat_rows(acc, m)?,
                None => m,
            });
        }
        let txt = text_mlp.forward_var(&mut tape, 0, "txt.", txt_rows.unwrap())?;
        let txt_e = tape.l2_normalize_rows(txt);

        let sims = tape.matmul_nt(img_e, txt_e)?;
        let s = tape.param(0, "logit_scale")?;
        let s_exp = tape.exp(s);
        let logits = tape.mul_scalar(sims, s_exp)?;
        let diag: Vec<u32> = (0..b as u32).collect();
        let mask = vec![true; b];
        let loss_i = tape.cross_entropy(logits, &diag, &mask, Reduction::Mean)?;
        let logits_t = tape.transpose(logits);
        let loss_t = tape.cross_entropy(logits_t, &diag, &mask, Reduction::Mean)?;
        let both = tape.add(loss_i, loss_t)?;
        let loss = tape.scale(both, 0.5);
        let loss_val = tape.value(loss).item() as f64;
        if step == 0 {
            report.initial_loss = loss_val;
        }
        if !loss_val.is_finite() {
            return Err(Error::Training(format!("contrastive loss NaN at step {step}")));
        }
        report.final_loss = loss_val;
        let grads = tape.backward(loss)?;
        grads.apply_to(0, &mut params);
        clip_global_norm(&mut [&mut params], cfg.grad_clip)?;
        opt.step(&mut params)?;
    }
    params.freeze_all();

    let mut enc_params = ParamStore::new();
    let mut tower_params = ParamStore::new();
    for (name, t) in params.iter() {
        if name.starts_with("img.") || name.starts_with("txt.") || name == "logit_scale" {
            tower_params.insert_raw(name, t.clone());
        } else {
            enc_params.insert_raw(name, t.clone());
        }
    }
    let model = EncoderModel {
        kind: EncoderKind::Contrastive,
        arch: backbone,
        geometry: FeatureGeometry::Pooled { h_i: cfg.h_i },
        prompt_len: cfg.prompt_len,
        params: enc_params,
    };
    let towers = ContrastiveTowers {
        img_head,
        text_mlp,
        text_dim: cfg.text_dim,
        params: tower_params,
    };

    // Held-out retrieval: rank each image's own caption within a batch.
    let mut correct = 0usize;
    let mut total = 0usize;
    for chunk in val.chunks(b) {
        if chunk.len() < b {
            break;
        }
        let mut txt_embs = Vec::with_capacity(b);
        for (_, ids) in chunk {
            txt_embs.push(towers.embed_text(ids)?);
        }
        for (i, (obs, _)) in chunk.iter().enumerate() {
            let f = model.encode_flat(obs)?;
            let ie = towers.embed_image(&f)?;
            let mut best = 0usize;
            let mut best_sim = f32::NEG_INFINITY;
            for (j, te) in txt_embs.iter().enumerate() {
                let sim: f32 = ie.data().iter().zip(te.data()).map(|(a, b)| a * b).sum();
                if sim > best_sim {
                    best_sim = sim;
                    best = j;
                }
            }
            if best == i {
                correct += 1;
            }
            total += 1;
        }
    }
    report.r_at_1 = correct as f64 / total.max(1) as f64;
    if let Some(gate) = cfg.retrieval_gate {
        if report.r_at_1 < gate {
            return Err(Error::Training(format!(
                "contrastive R@1 {:.3} below gate {gate:.3}",
                report.r_at_1
            )));
        }
    }
    Ok((model, towers, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SslConfig {
    pub n_patches: usize,
    pub d_patch: usize,
    pub h_patch: usize,
    pub hidden: Vec<usize>,
    pub mask_ratio: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub grad_clip: f64,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            n_patches: 9,
            d_patch: 8,
            h_patch: 32,
            hidden: vec![128],
            mask_ratio: 0.4,
            steps: 800,
            batch_size: 64,
            lr: 1e-3,
            grad_clip: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SslReport {
    pub masked_mse: f64,
    /// MSE of predicting each masked patch as the mean of unmasked patches.
    pub baseline_mse: f64,
}

/// Masked-patch regression: a random fraction of patches is zeroed on
/// input and the encoder + a light decoder regress their original values.
/// No labels or captions are consumed anywhere on this path.
pub fn pretrain_encoder_ssl(
    train: &[Vec<f32>],
    val: &[Vec<f32>],
    cfg: &SslConfig,
    seed: u64,
) -> Result<(EncoderModel, SslReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::Usage("ssl pretraining needs data".into()));
    }
    if !(0.0..1.0).contains(&cfg.mask_ratio) {
        return Err(Error::Config(format!(
            "mask_ratio {} outside [0,1)",
            cfg.mask_ratio
        )));
    }
    let (np, dp) = (cfg.n_patches, cfg.d_patch);
    let input_dim = np * dp;
    let arch = MlpArch {
        input_dim,
        hidden: cfg.hidden.clone(),
        output_dim: np * cfg.h_patch,
        activation: Act::Gelu,
        init_gain: 1.0,
    };
    let mut params = ParamStore::new();
    arch.init_params(rng::derive_seed(seed, "ssl-encoder"), &mut params, "");
    {
        let mut r = rng::rng(rng::derive_seed(seed, "ssl-decoder"));
        params.insert(
            "dec.w",
            crate::tensor::init::fan_in(&mut r, cfg.h_patch, &[cfg.h_patch, dp]),
        );
        params.insert("dec.b", Tensor::zeros(&[dp]));
    }
    let mut opt = AdamWState::new(
        AdamWConfig {
            lr: cfg.lr,
            ..AdamWConfig::default()
        },
        &params,
    );
    let n_masked = ((np as f64) * cfg.mask_ratio).floor() as usize;
    let b = cfg.batch_size;
    for step in 0..cfg.steps as u64 {
        let mut r = rng::keyed_rng(seed, &[0x551, step]);
        let idx: Vec<usize> = (0..b).map(|_| r.gen_range(0..train.len())).collect();
        let mut xdata = Vec::with_capacity(b * input_dim);
        let mut target = Vec::with_capacity(b * input_dim);
        let mut row_mask = Vec::with_capacity(b * np);
        for &i in &idx {
            let obs = &train[i];
            target.extend_from_slice(obs);
            let mut masked = vec![false; np];
            let mut remaining: Vec<usize> = (0..np).collect();
            for _ in 0..n_masked {
                let pick = r.gen_range(0..remaining.len());
                masked[remaining.swap_remove(pick)] = true;
            }
            for (p, &m) in masked.iter().enumerate() {
                if m {
                    xdata.extend(std::iter::repeat(0.0f32).take(dp));
                } else {
                    xdata.extend_from_slice(&obs[p * dp..(p + 1) * dp]);
                }
                row_mask.push(m);
            }
        }
        let x = Tensor::from_vec(&[b, input_dim], xdata)?;
        let target_t = Tensor::from_vec(&[b * np, dp], target)?;
        let mut tape = Tape::new(&[&params]);
        let xv = tape.constant(x);
        let enc = arch.forward_var(&mut tape, 0, "", xv)?;
        let per_patch = tape.reshape(enc, &[b * np, cfg.h_patch])?;
        let dw = tape.param(0, "dec.w")?;
        let db = tape.param(0, "dec.b")?;
        let dec = tape.matmul(per_patch, dw)?;
        let pred = tape.add_bias(dec, db)?;
        let loss = tape.mse_masked(pred, &target_t, &row_mask)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Training(format!("ssl loss NaN at step {step}")));
        }
        let grads = tape.backward(loss)?;
        grads.apply_to(0, &mut params);
        clip_global_norm(&mut [&mut params], cfg.grad_clip)?;
        opt.step(&mut params)?;
    }
    params.freeze_all();
    let model = EncoderModel {
        kind: EncoderKind::Ssl,
        arch: arch.clone(),
        geometry: FeatureGeometry::PatchGrid {
            n_patches: np,
            h_patch: cfg.h_patch,
        },
        prompt_len: np,
        params,
    };

    // Held-out masked reconstruction vs the unmasked-mean baseline.
    let mut model_se = 0.0f64;
    let mut base_se = 0.0f64;
    let mut count = 0usize;
    for (i, obs) in val.iter().enumerate() {
        let mut r = rng::keyed_rng(seed, &[0x55e, i as u64]);
        let mut masked = vec![false; np];
        let mut remaining: Vec<usize> = (0..np).collect();
        for _ in 0..n_masked.max(1) {
            let pick = r.gen_range(0..remaining.len());
            masked[remaining.swap_remove(pick)] = true;
        }
        let mut xdata = Vec::with_capacity(input_dim);
        for (p, &m) in masked.iter().enumerate() {
            if m {
                xdata.extend(std::iter::repeat(0.0f32).take(dp));
            } else {
                xdata.extend_from_slice(&obs[p * dp..(p + 1) * dp]);
            }
        }
        let x = Tensor::from_vec(&[1, input_dim], xdata)?;
        let enc = arch.forward_infer(&model.params, "", &x)?;
        let per_patch = enc.reshaped(&[np, cfg.h_patch])?;
        let pred = crate::tensor::add_bias_rows(
            &crate::tensor::matmul(&per_patch, model.params.get("dec.w")?),
            model.params.get("dec.b")?.data(),
        );
        // unmasked mean patch
        let mut mean_patch = vec![0.0f32; dp];
        let n_vis = masked.iter().filter(|&&m| !m).count().max(1);
        for (p, &m) in masked.iter().enumerate() {
            if !m {
                for (acc, &v) in mean_patch.iter_mut().zip(&obs[p * dp..(p + 1) * dp]) {
                    *acc += v;
                }
            }
        }
        mean_patch.iter_mut().for_each(|v| *v /= n_vis as f32);
        for (p, &m) in masked.iter().enumerate() {
            if m {
                for j in 0..dp {
                    let truth = obs[p * dp + j] as f64;
                    let d1 = pred.row(p)[j] as f64 - truth;
                    model_se += d1 * d1;
                    let d2 = mean_patch[j] as f64 - truth;
                    base_se += d2 * d2;
                    count += 1;
                }
            }
        }
    }
    let report = SslReport {
        masked_mse: model_se / count.max(1) as f64,
        baseline_mse: base_se / count.max(1) as f64,
    };
    Ok((model, report))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomConfig {
    pub input_dim: usize,
    pub h_i: usize,
    pub hidden: Vec<usize>,
    pub prompt_len: usize,
    /// Init gain; >1 with tanh drives the net chaotic so nearby inputs
    /// decorrelate layer by layer.
    pub gain: f64,
}

impl Default for RandomConfig {
    fn default() -> Self {
        RandomConfig {
            input_dim: 72,
            h_i: 48,
            hidden: vec![96, 96, 96],
            prompt_len: 2,
            gain: 2.5,
        }
    }
}

/// A randomly initialized encoder, immediately frozen, never trained.
pub fn random_encoder(cfg: &RandomConfig, seed: u64) -> EncoderModel {
    let arch = MlpArch {
        input_dim: cfg.input_dim,
        hidden: cfg.hidden.clone(),
        output_dim: cfg.h_i,
        activation: Act::Tanh,
        init_gain: cfg.gain,
    };
    let mut params = ParamStore::new();
    arch.init_params(rng::derive_seed(seed, "random-encoder"), &mut params, "");
    params.freeze_all();
    EncoderModel {
        kind: EncoderKind::Random,
        arch,
        geometry: FeatureGeometry::Pooled { h_i: cfg.h_i },
        prompt_len: cfg.prompt_len,
        params,
    }
}
