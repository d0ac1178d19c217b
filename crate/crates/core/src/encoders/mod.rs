//! Observation→feature encoders spanning a supervision spectrum.
//!
//! Four variants are produced from the same MLP family:
//! - contrastive: trained to align observations with caption text,
//! - classifier: trained on category labels,
//! - ssl: masked-patch regression, never sees labels or captions,
//! - random: frozen at a chaotic initialization (saturating activation,
//!   amplified weights), the stand-in for a deep untrained network that
//!   scrambles its input beyond linear recovery.

mod pretrain;

pub use pretrain::{
    pretrain_encoder_classifier, pretrain_encoder_contrastive, pretrain_encoder_ssl,
    random_encoder, ClassifierConfig, ContrastiveConfig, ContrastiveReport, ContrastiveTowers,
    RandomConfig, SslConfig, SslReport,
};

use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{init, ParamStore, Tape, Tensor, Var};
use crate::tensor::{add_bias_rows, gelu_val, matmul};
use crate::world::Observation;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Contrastive,
    Classifier,
    Ssl,
    Random,
}

impl EncoderKind {
    pub fn as_str(self) -> &'static str {
        match self {
            EncoderKind::Contrastive => "contrastive",
            EncoderKind::Classifier => "classifier",
            EncoderKind::Ssl => "ssl",
            EncoderKind::Random => "random",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "contrastive" => Ok(EncoderKind::Contrastive),
            "classifier" => Ok(EncoderKind::Classifier),
            "ssl" => Ok(EncoderKind::Ssl),
            "random" => Ok(EncoderKind::Random),
            _ => Err(Error::Config(format!("unknown encoder kind {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureGeometry {
    Pooled { h_i: usize },
    PatchGrid { n_patches: usize, h_patch: usize },
}

impl FeatureGeometry {
    /// Total feature width when flattened.
    pub fn flat_dim(&self) -> usize {
        match *self {
            FeatureGeometry::Pooled { h_i } => h_i,
            FeatureGeometry::PatchGrid { n_patches, h_patch } => n_patches * h_patch,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Act {
    Gelu,
    Tanh,
}

/// Plain MLP: linear layers with the activation between them (none after
/// the last layer).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpArch {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub activation: Act,
    /// Multiplier on the fan-in init std. Values well above 1 with tanh put
    /// the net in a chaotic regime.
    pub init_gain: f64,
}

impl MlpArch {
    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.input_dim];
        d.extend_from_slice(&self.hidden);
        d.push(self.output_dim);
        d
    }

    pub fn init_params(&self, seed: u64, store: &mut ParamStore, prefix: &str) {
        let mut r = rng::rng(seed);
        let dims = self.dims();
        for (i, w) in dims.windows(2).enumerate() {
            let std = self.init_gain / (w[0] as f64).sqrt();
            store.insert(&format!("{prefix}l{i}.w"), init::normal(&mut r, &[w[0], w[1]], std));
            store.insert(&format!("{prefix}l{i}.b"), Tensor::zeros(&[w[1]]));
        }
    }

    fn act_infer(&self, x: &mut Tensor) {
        match self.activation {
            Act::Gelu => x.data_mut().iter_mut().for_each(|v| *v = gelu_val(*v)),
            Act::Tanh => x.data_mut().iter_mut().for_each(|v| *v = v.tanh()),
        }
    }

    /// Tape-free forward for `[rows × input_dim]`.
    pub fn forward_infer(&self, params: &ParamStore, prefix: &str, x: &Tensor) -> Result<Tensor> {
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!(
                "mlp input {} != expected {}",
                x.cols(),
                self.input_dim
            )));
        }
        let n_layers = self.dims().len() - 1;
        let mut h = x.clone();
        for i in 0..n_layers {
            let w = params.get(&format!("{prefix}l{i}.w"))?;
            let b = params.get(&format!("{prefix}l{i}.b"))?;
            h = add_bias_rows(&matmul(&h, w), b.data());
            if i + 1 < n_layers {
                self.act_infer(&mut h);
            }
        }
        Ok(h)
    }

    /// Tape forward (training path).
    pub fn forward_var(
        &self,
        tape: &mut Tape<'_, f32>,
        store_idx: usize,
        prefix: &str,
        x: Var,
    ) -> Result<Var> {
        let n_layers = self.dims().len() - 1;
        let mut h = x;
        for i in 0..n_layers {
            let w = tape.param(store_idx, &format!("{prefix}l{i}.w"))?;
            let b = tape.param(store_idx, &format!("{prefix}l{i}.b"))?;
            h = tape.matmul(h, w)?;
            h = tape.add_bias(h, b)?;
            if i + 1 < n_layers {
                h = match self.activation {
                    Act::Gelu => tape.gelu(h),
                    Act::Tanh => tape.tanh(h),
                };
            }
        }
        Ok(h)
    }
}

/// A frozen (or freezable) observation encoder.
#[derive(Debug, Clone)]
pub struct EncoderModel {
    pub kind: EncoderKind,
    pub arch: MlpArch,
    pub geometry: FeatureGeometry,
    /// Soft-prompt length this encoder feeds by default.
    pub prompt_len: usize,
    pub params: ParamStore,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EncoderMeta {
    kind: EncoderKind,
    arch: MlpArch,
    geometry: FeatureGeometry,
    prompt_len: usize,
}

impl EncoderModel {
    pub fn freeze(&mut self) {
        self.params.freeze_all();
    }

    pub fn is_frozen(&self) -> bool {
        self.params.trainable_names().is_empty()
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    /// Encode a flat observation vector. Pooled encoders return `[1 × h_i]`;
    /// patch encoders return `[n_patches × h_patch]`.
    pub fn encode_flat(&self, flat: &[f32]) -> Result<Tensor> {
        if flat.len() != self.arch.input_dim {
            return Err(Error::Shape(format!(
                "observation dim {} != encoder input {}",
                flat.len(),
                self.arch.input_dim
            )));
        }
        let x = Tensor::from_vec(&[1, flat.len()], flat.to_vec())?;
        let out = self.arch.forward_infer(&self.params, "", &x)?;
        match self.geometry {
            FeatureGeometry::Pooled { h_i } => {
                debug_assert_eq!(out.numel(), h_i);
                Ok(out)
            }
            FeatureGeometry::PatchGrid { n_patches, h_patch } => {
                out.reshaped(&[n_patches, h_patch])
            }
        }
    }

    pub fn encode(&self, obs: &Observation) -> Result<Tensor> {
        self.encode_flat(&obs.flat())
    }

    pub fn save(&self, base: impl AsRef<std::path::Path>) -> Result<()> {
        let base = base.as_ref();
        let meta = EncoderMeta {
            kind: self.kind,
            arch: self.arch.clone(),
            geometry: self.geometry,
            prompt_len: self.prompt_len,
        };
        std::fs::write(
            base.with_extension("json"),
            serde_json::to_string_pretty(&meta)?,
        )?;
        let mut c = crate::io::Container::new();
        for (name, t) in self.params.iter() {
            c.insert(name, t.clone());
        }
        c.save(base.with_extension("limb"))
    }

    pub fn load(base: impl AsRef<std::path::Path>) -> Result<Self> {
        let base = base.as_ref();
        let meta: EncoderMeta =
            serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
        let c = crate::io::Container::load(base.with_extension("limb"))?;
        let mut params = ParamStore::new();
        for name in c.names() {
            params.insert_raw(name, c.get(name)?.clone());
        }
        params.freeze_all();
        Ok(EncoderModel {
            kind: meta.kind,
            arch: meta.arch,
            geometry: meta.geometry,
            prompt_len: meta.prompt_len,
            params,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn random_encoders_differ_by_seed_and_hash_stable() {
        let cfg = RandomConfig::default();
        let a = random_encoder(&cfg, 1);
        let b = random_encoder(&cfg, 2);
        assert_ne!(a.content_hash(), b.content_hash());
        assert_eq!(a.content_hash(), random_encoder(&cfg, 1).content_hash());
        assert!(a.is_frozen());
    }

    #[test]
    fn random_encoder_output_is_finite_and_order_one() {
        let cfg = RandomConfig::default();
        let enc = random_encoder(&cfg, 7);
        let mut r = rng::rng(3);
        for _ in 0..20 {
            let obs: Vec<f32> = (0..cfg.input_dim)
                .map(|_| {
                    use rand::Rng;
                    r.gen_range(-2.0f32..2.0)
                })
                .collect();
            let f = enc.encode_flat(&obs).unwrap();
            assert!(f.is_finite());
            let rms = (f.data().iter().map(|v| v * v).sum::<f32>() / f.numel() as f32).sqrt();
            assert!(rms > 0.01 && rms < 10.0, "rms {rms}");
        }
    }
}
