//! Scrambled-embedding oracle encoder.
//!
//! Features are the LM embeddings of a caption's first k tokens (padded
//! with the EOS embedding), flattened and multiplied by a fixed random
//! orthogonal matrix. By construction an exact linear inverse exists, so a
//! trained projection must recover it; this is the ground-truth fixture
//! for the linear-recoverability contract.

use crate::error::Result;
use crate::lm::{DecoderLM, EOS};
use crate::rng;
use crate::tensor::{init, Tensor};

/// Separator used between oracle prompts and captions; mirrors the trainer.
pub const ORACLE_SEP: &str = ".";

#[derive(Debug, Clone)]
pub struct OracleEncoder {
    /// Orthogonal scramble, `[k·e_l × k·e_l]`.
    pub matrix: Tensor,
    pub k: usize,
    pub e_l: usize,
}

impl OracleEncoder {
    /// Build with a random orthogonal scramble (Gram-Schmidt of a Gaussian).
    pub fn new(k: usize, e_l: usize, seed: u64) -> Self {
        let d = k * e_l;
        let mut r = rng::rng(rng::derive_seed(seed, "oracle-scramble"));
        let g = init::normal::<f32>(&mut r, &[d, d], 1.0);
        let mut rows: Vec<Vec<f64>> = (0..d)
            .map(|i| g.row(i).iter().map(|&v| v as f64).collect())
            .collect();
        for i in 0..d {
            for j in 0..i {
                let dot: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| a * b).sum();
                let (head, tail) = rows.split_at_mut(i);
                let rj = &head[j];
                for (a, b) in tail[0].iter_mut().zip(rj) {
                    *a -= dot * b;
                }
            }
            let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            rows[i].iter_mut().for_each(|v| *v /= norm);
        }
        let data: Vec<f32> = rows.into_iter().flatten().map(|v| v as f32).collect();
        OracleEncoder {
            matrix: Tensor::from_vec(&[d, d], data).unwrap(),
            k,
            e_l,
        }
    }

    /// Feature vector for a caption: embeddings of its first k tokens
    /// (EOS-padded), flattened, scrambled.
    pub fn features_for(&self, lm: &DecoderLM, tokens: &[u32]) -> Result<Tensor> {
        let mut ids: Vec<u32> = tokens.iter().copied().take(self.k).collect();
        while ids.len() < self.k {
            ids.push(EOS);
        }
        let emb = lm.embed_tokens(&ids)?; // [k × e_l]
        let flat = emb.reshaped(&[1, self.k * self.e_l])?;
        let scrambled = crate::tensor::matmul(&flat, &self.matrix);
        Ok(scrambled)
    }

    pub fn feature_dim(&self) -> usize {
        self.k * self.e_l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scramble_is_orthogonal() {
        let o = OracleEncoder::new(2, 6, 3);
        let d = 12;
        // M · Mᵀ ≈ I
        let prod = crate::tensor::matmul_nt(&o.matrix, &o.matrix);
        for i in 0..d {
            for j in 0..d {
                let v = prod.data()[i * d + j];
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((v - expect).abs() < 1e-4, "M Mᵀ [{i},{j}] = {v}");
            }
        }
    }
}
