//! Projection checkpoints: tensor container plus a JSON sidecar manifest.
//!
//! A checkpoint restores the projection bit-exactly together with the
//! optimizer moments and step counter, so resumed training matches an
//! uninterrupted run step for step.

use super::train::{LimberTrainConfig, ResumeState};
use super::{Projection, ProjectionMode};
use crate::error::{Error, Result};
use crate::io::Container;
use crate::tensor::{ParamStore, Tensor};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LimberCheckpoint {
    pub version: u32,
    pub step: u64,
    pub seed: u64,
    pub config: LimberTrainConfig,
    pub mode: ProjectionMode,
    pub k: usize,
    pub e_l: usize,
    pub in_dim: usize,
    /// Content hashes of the frozen models this projection was trained
    /// against; verified on load.
    pub lm_hash: String,
    pub encoder_hash: String,
}

/// Write `<base>.limb` (tensors + optimizer moments) and `<base>.json`.
pub fn save_checkpoint(
    base: impl AsRef<Path>,
    proj: &Projection,
    resume: &ResumeState,
    config: &LimberTrainConfig,
    lm_hash: &str,
    encoder_hash: &str,
) -> Result<()> {
    let base = base.as_ref();
    let meta = LimberCheckpoint {
        version: CHECKPOINT_VERSION,
        step: resume.step,
        seed: config.seed,
        config: config.clone(),
        mode: proj.mode,
        k: proj.k,
        e_l: proj.e_l,
        in_dim: proj.in_dim,
        lm_hash: lm_hash.to_string(),
        encoder_hash: encoder_hash.to_string(),
    };
    std::fs::write(base.with_extension("json"), serde_json::to_string_pretty(&meta)?)?;
    let mut c = Container::new();
    for (name, t) in proj.params.iter() {
        c.insert(name, t.clone());
    }
    for (name, m, v) in &resume.moments {
        let shape = proj.params.get(name)?.shape().to_vec();
        c.insert(&format!("opt.m.{name}"), Tensor::from_vec(&shape, m.clone())?);
        c.insert(&format!("opt.v.{name}"), Tensor::from_vec(&shape, v.clone())?);
    }
    c.save(base.with_extension("limb"))
}

/// Load a checkpoint, verifying container integrity and that the frozen
/// models match the hashes recorded at save time.
pub fn load_checkpoint(
    base: impl AsRef<Path>,
    expect_lm_hash: &str,
    expect_encoder_hash: &str,
) -> Result<(Projection, ResumeState, LimberCheckpoint)> {
    let base = base.as_ref();
    let meta: LimberCheckpoint =
        serde_json::from_str(&std::fs::read_to_string(base.with_extension("json"))?)?;
    if meta.version != CHECKPOINT_VERSION {
        return Err(Error::Integrity(format!(
            "unsupported checkpoint version {}",
            meta.version
        )));
    }
    if meta.lm_hash != expect_lm_hash {
        return Err(Error::Integrity(
            "checkpoint was trained against a different LM (hash mismatch)".into(),
        ));
    }
    if meta.encoder_hash != expect_encoder_hash {
        return Err(Error::Integrity(
            "checkpoint was trained against a different encoder (hash mismatch)".into(),
        ));
    }
    let c = Container::load(base.with_extension("limb"))?;
    let mut params = ParamStore::new();
    let mut moments = Vec::new();
    for name in ["proj.w", "proj.b"] {
        params.insert(name, c.get(name)?.clone());
        let m = c.get(&format!("opt.m.{name}"))?.data().to_vec();
        let v = c.get(&format!("opt.v.{name}"))?.data().to_vec();
        moments.push((name.to_string(), m, v));
    }
    let proj = Projection {
        mode: meta.mode,
        k: meta.k,
        e_l: meta.e_l,
        in_dim: meta.in_dim,
        params,
    };
    let resume = ResumeState {
        step: meta.step,
        moments,
    };
    Ok((proj, resume, meta))
}
