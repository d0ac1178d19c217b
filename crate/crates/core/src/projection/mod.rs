//! The linear map from encoder feature space to LM soft prompts, and its
//! caption-loss trainer with everything else frozen.

mod checkpoint;
mod oracle;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, LimberCheckpoint};
pub use oracle::{OracleEncoder, ORACLE_SEP};
pub use train::{
    train_projection, train_projection_tuned, LimberTrainConfig, ObsExample, TrainExample,
    TrainReport,
};

use crate::encoders::{EncoderModel, FeatureGeometry};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{init, ParamStore, Tape, Tensor, Var};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// One affine map from a pooled feature vector to all k prompt rows.
    VectorToSequence,
    /// One shared affine map applied to each of k patch features.
    PerPatchShared,
}

/// Affine projection producing a `[k × e_l]` soft-prompt block. In a
/// frozen-encoder run these are the only trainable parameters anywhere.
#[derive(Debug, Clone)]
pub struct Projection {
    pub mode: ProjectionMode,
    pub k: usize,
    pub e_l: usize,
    /// `h_i` in vector mode, `h_patch` in per-patch mode.
    pub in_dim: usize,
    pub params: ParamStore,
}

impl Projection {
    pub fn vector_to_sequence(h_i: usize, k: usize, e_l: usize, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut r = rng::rng(seed);
        params.insert("proj.w", init::fan_in(&mut r, h_i, &[h_i, k * e_l]));
        params.insert("proj.b", Tensor::zeros(&[k * e_l]));
        Projection {
            mode: ProjectionMode::VectorToSequence,
            k,
            e_l,
            in_dim: h_i,
            params,
        }
    }

    pub fn per_patch_shared(h_patch: usize, k: usize, e_l: usize, seed: u64) -> Self {
        let mut params = ParamStore::new();
        let mut r = rng::rng(seed);
        params.insert("proj.w", init::fan_in(&mut r, h_patch, &[h_patch, e_l]));
        params.insert("proj.b", Tensor::zeros(&[e_l]));
        Projection {
            mode: ProjectionMode::PerPatchShared,
            k,
            e_l,
            in_dim: h_patch,
            params,
        }
    }

    /// Pick the mode matching an encoder's output geometry.
    pub fn for_encoder(enc: &EncoderModel, e_l: usize, seed: u64) -> Self {
        match enc.geometry {
            FeatureGeometry::Pooled { h_i } => {
                Projection::vector_to_sequence(h_i, enc.prompt_len, e_l, seed)
            }
            FeatureGeometry::PatchGrid { n_patches, h_patch } => {
                Projection::per_patch_shared(h_patch, n_patches, e_l, seed)
            }
        }
    }

    fn check_features(&self, shape_rows: usize, shape_cols: usize) -> Result<()> {
        match self.mode {
            ProjectionMode::VectorToSequence => {
                if shape_rows * shape_cols != self.in_dim {
                    return Err(Error::Shape(format!(
                        "vector projection expects {} features, got {}x{}",
                        self.in_dim, shape_rows, shape_cols
                    )));
                }
            }
            ProjectionMode::PerPatchShared => {
                if shape_rows != self.k || shape_cols != self.in_dim {
                    return Err(Error::Shape(format!(
                        "per-patch projection expects [{}x{}], got [{}x{}]",
                        self.k, self.in_dim, shape_rows, shape_cols
                    )));
                }
            }
        }
        Ok(())
    }

    /// Project features into the `[k × e_l]` prompt block (inference path).
    pub fn project(&self, features: &Tensor) -> Result<Tensor> {
        self.check_features(features.rows(), features.cols())?;
        let w = self.params.get("proj.w")?;
        let b = self.params.get("proj.b")?;
        match self.mode {
            ProjectionMode::VectorToSequence => {
                let flat = features.clone().reshaped(&[1, self.in_dim])?;
                let out = crate::tensor::add_bias_rows(&crate::tensor::matmul(&flat, w), b.data());
                out.reshaped(&[self.k, self.e_l])
            }
            ProjectionMode::PerPatchShared => {
                Ok(crate::tensor::add_bias_rows(&crate::tensor::matmul(features, w), b.data()))
            }
        }
    }

    /// Tape (training) path; `features` is a tape var of the same geometry.
    pub fn project_var(
        &self,
        tape: &mut Tape<'_, f32>,
        store_idx: usize,
        features: Var,
    ) -> Result<Var> {
        let (rows, cols) = {
            let f = tape.value(features);
            (f.rows(), f.cols())
        };
        self.check_features(rows, cols)?;
        let w = tape.param(store_idx, "proj.w")?;
        let b = tape.param(store_idx, "proj.b")?;
        match self.mode {
            ProjectionMode::VectorToSequence => {
                let flat = tape.reshape(features, &[1, self.in_dim])?;
                let out = tape.matmul(flat, w)?;
                let out = tape.add_bias(out, b)?;
                tape.reshape(out, &[self.k, self.e_l])
            }
            ProjectionMode::PerPatchShared => {
                let out = tape.matmul(features, w)?;
                tape.add_bias(out, b)
            }
        }
    }

    pub fn content_hash(&self) -> String {
        self.params.content_hash()
    }

    pub fn trainable_names(&self) -> Vec<String> {
        self.params.trainable_names()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_projection_gives_zero_prompt() {
        let mut p = Projection::vector_to_sequence(6, 2, 4, 0);
        for name in ["proj.w", "proj.b"] {
            p.params
                .get_mut(name)
                .unwrap()
                .data_mut()
                .iter_mut()
                .for_each(|v| *v = 0.0);
        }
        let f = Tensor::from_vec(&[1, 6], vec![1.0; 6]).unwrap();
        let out = p.project(&f).unwrap();
        assert_eq!(out.shape(), &[2, 4]);
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_patch_k1_equals_vector_k1() {
        // With k = 1 both modes are the same affine map.
        let h = 5;
        let e_l = 4;
        let v = Projection::vector_to_sequence(h, 1, e_l, 3);
        let mut pp = Projection::per_patch_shared(h, 1, e_l, 99);
        *pp.params.get_mut("proj.w").unwrap() = v.params.get("proj.w").unwrap().clone();
        *pp.params.get_mut("proj.b").unwrap() = v.params.get("proj.b").unwrap().clone();
        let f = Tensor::from_vec(&[1, h], vec![0.3, -1.0, 2.0, 0.5, -0.2]).unwrap();
        let a = v.project(&f).unwrap();
        let b = pp.project(&f).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn geometry_mismatch_is_shape_error() {
        let p = Projection::per_patch_shared(8, 9, 16, 0);
        let wrong = Tensor::zeros(&[4, 8]);
        assert!(p.project(&wrong).is_err());
        let v = Projection::vector_to_sequence(48, 2, 16, 0);
        let wrong2 = Tensor::zeros(&[1, 47]);
        assert!(v.project(&wrong2).is_err());
    }

    #[test]
    fn paper_scale_geometry_checks_out() {
        // h_i = 2048 → k = 2 prompts of e_l = 4096.
        let p = Projection::vector_to_sequence(2048, 2, 4096, 1);
        assert_eq!(p.params.get("proj.w").unwrap().shape(), &[2048, 2 * 4096]);
        let f = Tensor::zeros(&[1, 2048]);
        assert_eq!(p.project(&f).unwrap().shape(), &[2, 4096]);
    }
}
