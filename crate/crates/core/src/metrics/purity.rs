//! Neighbor purity: how label-pure each point's cosine neighborhood is.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Mean over points of the fraction of the k nearest cosine neighbors
/// (excluding the point itself) that share its label. Neighbor ties break
/// deterministically by index.
pub fn neighbor_purity(features: &Tensor, labels: &[usize], k: usize) -> Result<f64> {
    let n = features.rows();
    if labels.len() != n {
        return Err(Error::Usage(format!(
            "{n} feature rows vs {} labels",
            labels.len()
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::Config(format!(
            "k = {k} must be in 1..{n}"
        )));
    }
    let d = features.cols();
    let mut norms = Vec::with_capacity(n);
    for r in 0..n {
        let norm = features
            .row(r)
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
            .max(1e-12);
        norms.push(norm);
    }
    let mut total = 0.0f64;
    for i in 0..n {
        let mut sims: Vec<(f64, usize)> = Vec::with_capacity(n - 1);
        for j in 0..n {
            if j == i {
                continue;
            }
            let mut dot = 0.0f64;
            let (ri, rj) = (features.row(i), features.row(j));
            for t in 0..d {
                dot += ri[t] as f64 * rj[t] as f64;
            }
            sims.push((dot / (norms[i] * norms[j]), j));
        }
        sims.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let share = sims
            .iter()
            .take(k)
            .filter(|&&(_, j)| labels[j] == labels[i])
            .count();
        total += share as f64 / k as f64;
    }
    Ok(total / n as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_features_single_label_is_one() {
        let x = Tensor::from_vec(&[5, 3], vec![0.5; 15]).unwrap();
        let labels = vec![2usize; 5];
        assert_eq!(neighbor_purity(&x, &labels, 3).unwrap(), 1.0);
    }

    #[test]
    fn one_point_per_cluster_k1_is_zero() {
        let x = Tensor::from_vec(&[3, 2], vec![1.0, 0.0, 0.0, 1.0, -1.0, 0.0]).unwrap();
        let labels = vec![0usize, 1, 2];
        assert_eq!(neighbor_purity(&x, &labels, 1).unwrap(), 0.0);
    }

    #[test]
    fn k_out_of_range_is_config_error() {
        let x = Tensor::from_vec(&[3, 2], vec![0.0; 6]).unwrap();
        assert!(neighbor_purity(&x, &[0, 1, 2], 3).is_err());
        assert!(neighbor_purity(&x, &[0, 1, 2], 0).is_err());
    }

    #[test]
    fn invariant_to_uniform_positive_scaling() {
        let x = Tensor::from_vec(
            &[4, 2],
            vec![1.0, 0.1, 0.9, 0.2, -1.0, 0.3, -0.9, 0.1],
        )
        .unwrap();
        let labels = vec![0usize, 0, 1, 1];
        let a = neighbor_purity(&x, &labels, 2).unwrap();
        let mut scaled = x.clone();
        scaled.data_mut().iter_mut().for_each(|v| *v *= 37.5);
        let b = neighbor_purity(&scaled, &labels, 2).unwrap();
        assert_eq!(a, b);
    }
}
