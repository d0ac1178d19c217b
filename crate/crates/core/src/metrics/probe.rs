//! Linear probes over frozen features.

use super::lexical::Prf;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{init, AdamWConfig, AdamWState, ParamStore, Reduction, Tape, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProbeTask {
    /// Sigmoid + BCE, class predicted when sigmoid > threshold.
    Multilabel,
    /// Softmax + CE, argmax prediction.
    SingleLabel,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub task: ProbeTask,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl ProbeConfig {
    pub fn multilabel(seed: u64) -> Self {
        ProbeConfig {
            task: ProbeTask::Multilabel,
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 300,
            threshold: 0.5,
            seed,
        }
    }

    pub fn single_label(seed: u64) -> Self {
        ProbeConfig {
            task: ProbeTask::SingleLabel,
            ..ProbeConfig::multilabel(seed)
        }
    }

    fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.threshold) || self.threshold == 0.0 {
            return Err(Error::Config(format!(
                "threshold {} outside (0,1)",
                self.threshold
            )));
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return Err(Error::Config("batch_size and max_epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Labels for probe training/eval.
#[derive(Debug, Clone)]
pub enum ProbeLabels {
    Multi(Vec<Vec<bool>>),
    Single(Vec<usize>),
}

impl ProbeLabels {
    fn len(&self) -> usize {
        match self {
            ProbeLabels::Multi(v) => v.len(),
            ProbeLabels::Single(v) => v.len(),
        }
    }

    fn n_classes(&self) -> usize {
        match self {
            ProbeLabels::Multi(v) => v.first().map(|r| r.len()).unwrap_or(0),
            ProbeLabels::Single(v) => v.iter().copied().max().map(|m| m + 1).unwrap_or(0),
        }
    }
}

/// A trained single linear layer.
#[derive(Debug, Clone)]
pub struct Probe {
    pub task: ProbeTask,
    pub threshold: f64,
    pub params: ParamStore,
    pub n_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProbeEval {
    pub per_class: Vec<Prf>,
    pub macro_f1: f64,
    /// Argmax accuracy (single-label only; NaN for multilabel).
    pub accuracy: f64,
}

/// Train a linear probe on frozen features `[N×d]`.
pub fn train_probe(features: &Tensor, labels: &ProbeLabels, cfg: &ProbeConfig) -> Result<Probe> {
    cfg.validate()?;
    let n = features.rows();
    let d = features.cols();
    if labels.len() != n {
        return Err(Error::Usage(format!(
            "{n} feature rows vs {} labels",
            labels.len()
        )));
    }
    let n_classes = labels.n_classes();
    if n_classes < 2 {
        return Err(Error::Config(
            "probe needs at least 2 classes (degenerate label set)".into(),
        ));
    }
    if let ProbeLabels::Single(v) = labels {
        let mut seen = vec![false; n_classes];
        v.iter().for_each(|&c| seen[c] = true);
        if seen.iter().filter(|&&s| s).count() < 2 {
            return Err(Error::Config(
                "single-label probe data contains only one class".into(),
            ));
        }
    }
    let mut params = ParamStore::new();
    {
        let mut r = rng::rng(rng::derive_seed(cfg.seed, "probe-init"));
        params.insert("w", init::normal(&mut r, &[d, n_classes], 0.01));
        params.insert("b", Tensor::zeros(&[n_classes]));
    }
    // Probes follow the common AdamW defaults for this setting.
    let mut opt = AdamWState::new(
        AdamWConfig {
            lr: cfg.lr,
            betas: (0.9, 0.999),
            weight_decay: 0.0,
            eps: 1e-8,
        },
        &params,
    );
    let mut order: Vec<usize> = (0..n).collect();
    for epoch in 0..cfg.max_epochs as u64 {
        order.shuffle(&mut rng::keyed_rng(cfg.seed, &[0x9b0b, epoch]));
        for chunk in order.chunks(cfg.batch_size) {
            let mut xdata = Vec::with_capacity(chunk.len() * d);
            for &i in chunk {
                xdata.extend_from_slice(features.row(i));
            }
            let x = Tensor::from_vec(&[chunk.len(), d], xdata)?;
            let mut tape = Tape::new(&[&params]);
            let xv = tape.constant(x);
            let w = tape.param(0, "w")?;
            let b = tape.param(0, "b")?;
            let logits = tape.matmul(xv, w)?;
            let logits = tape.add_bias(logits, b)?;
            let loss = match labels {
                ProbeLabels::Multi(rows) => {
                    let mut t = Vec::with_capacity(chunk.len() * n_classes);
                    for &i in chunk {
                        t.extend(rows[i].iter().map(|&b| if b { 1.0f32 } else { 0.0 }));
                    }
                    let targets = Tensor::from_vec(&[chunk.len(), n_classes], t)?;
                    tape.bce_with_logits(logits, &targets)?
                }
                ProbeLabels::Single(ids) => {
                    let targets: Vec<u32> = chunk.iter().map(|&i| ids[i] as u32).collect();
                    let mask = vec![true; chunk.len()];
                    tape.cross_entropy(logits, &targets, &mask, Reduction::Mean)?
                }
            };
            if !tape.value(loss).item().is_finite() {
                return Err(Error::Training(format!("probe loss NaN in epoch {epoch}")));
            }
            let grads = tape.backward(loss)?;
            grads.apply_to(0, &mut params);
            opt.step(&mut params)?;
        }
    }
    params.freeze_all();
    Ok(Probe {
        task: cfg.task,
        threshold: cfg.threshold,
        params,
        n_classes,
    })
}

/// Per-class P/R/F1 (multilabel) or accuracy + per-class P/R/F1 from the
/// argmax confusion (single-label).
pub fn eval_probe(probe: &Probe, features: &Tensor, labels: &ProbeLabels) -> Result<ProbeEval> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Usage("feature/label count mismatch".into()));
    }
    let logits = crate::tensor::add_bias_rows(
        &crate::tensor::matmul(features, probe.params.get("w")?),
        probe.params.get("b")?.data(),
    );
    let c = probe.n_classes;
    let mut tp = vec![0usize; c];
    let mut fp = vec![0usize; c];
    let mut fn_ = vec![0usize; c];
    let mut correct = 0usize;
    for i in 0..n {
        let row = logits.row(i);
        match labels {
            ProbeLabels::Multi(rows) => {
                for j in 0..c {
                    let prob = 1.0 / (1.0 + (-row[j] as f64).exp());
                    let pred = prob > probe.threshold;
                    let gold = rows[i][j];
                    match (pred, gold) {
                        (true, true) => tp[j] += 1,
                        (true, false) => fp[j] += 1,
                        (false, true) => fn_[j] += 1,
                        _ => {}
                    }
                }
            }
            ProbeLabels::Single(ids) => {
                let mut best = 0usize;
                for j in 0..c {
                    if row[j] > row[best] {
                        best = j;
                    }
                }
                let gold = ids[i];
                if best == gold {
                    correct += 1;
                    tp[gold] += 1;
                } else {
                    fp[best] += 1;
                    fn_[gold] += 1;
                }
            }
        }
    }
    let per_class: Vec<Prf> = (0..c)
        .map(|j| {
            let p = if tp[j] + fp[j] == 0 { 0.0 } else { tp[j] as f64 / (tp[j] + fp[j]) as f64 };
            let r = if tp[j] + fn_[j] == 0 { 0.0 } else { tp[j] as f64 / (tp[j] + fn_[j]) as f64 };
            let f1 = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
            Prf { precision: p, recall: r, f1 }
        })
        .collect();
    let macro_f1 = per_class.iter().map(|p| p.f1).sum::<f64>() / c as f64;
    Ok(ProbeEval {
        per_class,
        macro_f1,
        accuracy: match labels {
            ProbeLabels::Single(_) => correct as f64 / n as f64,
            ProbeLabels::Multi(_) => f64::NAN,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linearly_separable_two_class_reaches_f1_one() {
        // class = sign of first coordinate
        let mut data = Vec::new();
        let mut ids = Vec::new();
        for i in 0..40 {
            let x = if i % 2 == 0 { 1.0 } else { -1.0 };
            data.extend_from_slice(&[x, 0.3 * (i as f32 % 5.0)]);
            ids.push(usize::from(i % 2 == 1));
        }
        let features = Tensor::from_vec(&[40, 2], data).unwrap();
        let labels = ProbeLabels::Single(ids);
        let cfg = ProbeConfig {
            max_epochs: 150,
            lr: 5e-2,
            ..ProbeConfig::single_label(1)
        };
        let probe = train_probe(&features, &labels, &cfg).unwrap();
        let eval = eval_probe(&probe, &features, &labels).unwrap();
        assert_eq!(eval.accuracy, 1.0);
        assert_eq!(eval.macro_f1, 1.0);
    }

    #[test]
    fn single_class_data_is_config_error() {
        let features = Tensor::from_vec(&[4, 2], vec![0.0; 8]).unwrap();
        let labels = ProbeLabels::Single(vec![0, 0, 0, 0]);
        assert!(train_probe(&features, &labels, &ProbeConfig::single_label(0)).is_err());
    }

    #[test]
    fn bad_threshold_is_config_error() {
        let features = Tensor::from_vec(&[4, 2], vec![0.0; 8]).unwrap();
        let labels = ProbeLabels::Single(vec![0, 1, 0, 1]);
        let cfg = ProbeConfig {
            threshold: 0.0,
            ..ProbeConfig::single_label(0)
        };
        assert!(train_probe(&features, &labels, &cfg).is_err());
    }
}
