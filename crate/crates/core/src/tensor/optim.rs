//! AdamW with decoupled weight decay, plus global-norm gradient clipping.

use super::params::ParamStore;
use super::Element;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub weight_decay: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            lr: 8e-4,
            betas: (0.9, 0.95),
            weight_decay: 0.0,
            eps: 1e-8,
        }
    }
}

/// Optimizer state for one [`ParamStore`]. Moment buffers are kept for
/// trainable entries only and match their shapes.
#[derive(Debug, Clone)]
pub struct AdamWState<E: Element = f32> {
    pub cfg: AdamWConfig,
    pub step: u64,
    m: Vec<Option<Vec<E>>>,
    v: Vec<Option<Vec<E>>>,
}

impl<E: Element> AdamWState<E> {
    pub fn new(cfg: AdamWConfig, store: &ParamStore<E>) -> Self {
        let m = (0..store.len())
            .map(|i| {
                store
                    .tensor(i)
                    .requires_grad()
                    .then(|| vec![E::zero(); store.tensor(i).numel()])
            })
            .collect::<Vec<_>>();
        let v = m.clone();
        AdamWState { cfg, step: 0, m, v }
    }

    /// One optimizer step over every trainable parameter in `store`.
    /// Gradients must be populated; they are zeroed afterwards.
    pub fn step(&mut self, store: &mut ParamStore<E>) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = self.cfg.betas;
        let bias1 = 1.0 - b1.powi(t);
        let bias2 = 1.0 - b2.powi(t);
        let lr = E::fp(self.cfg.lr);
        let b1e = E::fp(b1);
        let b2e = E::fp(b2);
        let one_m_b1 = E::fp(1.0 - b1);
        let one_m_b2 = E::fp(1.0 - b2);
        let inv_bias1 = E::fp(1.0 / bias1);
        let inv_bias2 = E::fp(1.0 / bias2);
        let eps = E::fp(self.cfg.eps);
        let wd = E::fp(self.cfg.weight_decay);

        for i in 0..store.len() {
            let tensor = store.tensor_mut(i);
            if !tensor.requires_grad() {
                continue;
            }
            let name = store.name(i).to_string();
            let tensor = store.tensor_mut(i);
            let grad = tensor
                .grad()
                .ok_or_else(|| Error::Usage(format!("parameter {name} has no gradient")))?
                .to_vec();
            let m = self.m[i].as_mut().expect("moment buffer");
            let v = self.v[i].as_mut().expect("moment buffer");
            let data = tensor.data_mut();
            for j in 0..data.len() {
                let g = grad[j];
                m[j] = b1e * m[j] + one_m_b1 * g;
                v[j] = b2e * v[j] + one_m_b2 * g * g;
                let m_hat = m[j] * inv_bias1;
                let v_hat = v[j] * inv_bias2;
                let update = m_hat / (v_hat.sqrt() + eps);
                data[j] = data[j] - lr * update - lr * wd * data[j];
            }
            tensor.zero_grad();
        }
        if !store.all_finite() {
            return Err(Error::Training("non-finite parameter after step".into()));
        }
        Ok(())
    }

    /// Moment buffers flattened per trainable param (name, m, v), for
    /// checkpointing. Resuming from these reproduces the update sequence.
    pub fn moments(&self, store: &ParamStore<E>) -> Vec<(String, Vec<E>, Vec<E>)> {
        (0..store.len())
            .filter_map(|i| {
                self.m[i].as_ref().map(|m| {
                    (
                        store.name(i).to_string(),
                        m.clone(),
                        self.v[i].as_ref().unwrap().clone(),
                    )
                })
            })
            .collect()
    }

    pub fn restore_moments(&mut self, store: &ParamStore<E>, step: u64, moments: &[(String, Vec<E>, Vec<E>)]) -> Result<()> {
        self.step = step;
        for (name, m, v) in moments {
            let idx = store
                .index_of(name)
                .ok_or_else(|| Error::Lookup(format!("moment for unknown param {name}")))?;
            if m.len() != store.tensor(idx).numel() {
                return Err(Error::Integrity(format!("moment size mismatch for {name}")));
            }
            self.m[idx] = Some(m.clone());
            self.v[idx] = Some(v.clone());
        }
        Ok(())
    }
}

/// Scale all gradients in `stores` so their global L2 norm is at most
/// `max_norm`. Returns the scale that was applied (1.0 when untouched).
pub fn clip_global_norm<E: Element>(stores: &mut [&mut ParamStore<E>], max_norm: f64) -> Result<f64> {
    if max_norm <= 0.0 {
        return Err(Error::Config(format!("max_norm must be positive, got {max_norm}")));
    }
    let mut sq = 0.0f64;
    for store in stores.iter() {
        for (_, t) in store.iter() {
            if let Some(g) = t.grad() {
                for &v in g {
                    let v = v.to_f64c();
                    sq += v * v;
                }
            }
        }
    }
    let norm = sq.sqrt();
    if norm <= max_norm || norm == 0.0 {
        return Ok(1.0);
    }
    let scale = max_norm / norm;
    let scale_e = E::fp(scale);
    for store in stores.iter_mut() {
        for i in 0..store.len() {
            if let Some(g) = store.tensor_mut(i).grad_mut() {
                g.iter_mut().for_each(|v| *v = *v * scale_e);
            }
        }
    }
    Ok(scale)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn single_step_matches_hand_computation() {
        // theta0 = 1, g = 1, lr = 0.1, betas = (0.9, 0.95), wd = 0:
        // m_hat = v_hat = 1, update = 1/(1 + eps) => theta ~= 0.9
        let mut store = ParamStore::<f32>::new();
        store.insert("x", Tensor::filled(&[1], 1.0));
        store.get_mut("x").unwrap().accumulate_grad(&[1.0]);
        let cfg = AdamWConfig {
            lr: 0.1,
            ..AdamWConfig::default()
        };
        let mut opt = AdamWState::new(cfg, &store);
        opt.step(&mut store).unwrap();
        let got = store.get("x").unwrap().data()[0];
        let expected = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((got - expected as f32).abs() < 1e-7, "got {got}");
    }

    #[test]
    fn zero_grad_and_zero_decay_leaves_params_unchanged() {
        let mut store = ParamStore::<f32>::new();
        store.insert("x", Tensor::filled(&[3], 2.5));
        store.get_mut("x").unwrap().accumulate_grad(&[0.0, 0.0, 0.0]);
        let mut opt = AdamWState::new(AdamWConfig::default(), &store);
        opt.step(&mut store).unwrap();
        assert_eq!(store.get("x").unwrap().data(), &[2.5, 2.5, 2.5]);
    }

    #[test]
    fn missing_grad_is_a_usage_error() {
        let mut store = ParamStore::<f32>::new();
        store.insert("x", Tensor::filled(&[1], 1.0));
        let mut opt = AdamWState::new(AdamWConfig::default(), &store);
        assert!(opt.step(&mut store).is_err());
    }

    #[test]
    fn clip_scales_above_threshold_only() {
        let mut store = ParamStore::<f32>::new();
        store.insert("x", Tensor::filled(&[2], 0.0));
        store.get_mut("x").unwrap().accumulate_grad(&[3.0, 4.0]);
        let scale = clip_global_norm(&mut [&mut store], 1.0).unwrap();
        assert!((scale - 0.2).abs() < 1e-9);
        let g = store.get("x").unwrap().grad().unwrap().to_vec();
        assert!((g[0] - 0.6).abs() < 1e-6 && (g[1] - 0.8).abs() < 1e-6);

        let scale = clip_global_norm(&mut [&mut store], 10.0).unwrap();
        assert_eq!(scale, 1.0);
    }

    #[test]
    fn clip_rejects_nonpositive_max_norm() {
        let mut store = ParamStore::<f32>::new();
        assert!(clip_global_norm(&mut [&mut store], 0.0).is_err());
    }
}
