//! Representational similarity analysis.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn cosine_rows(x: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = (x.rows(), x.cols());
    let mut norms = Vec::with_capacity(n);
    for r in 0..n {
        let norm = x.row(r).iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::Undefined(format!("feature row {r} has zero norm")));
        }
        norms.push(norm);
    }
    let mut upper = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in (i + 1)..n {
            let mut dot = 0.0f64;
            let (ri, rj) = (x.row(i), x.row(j));
            for k in 0..d {
                dot += ri[k] as f64 * rj[k] as f64;
            }
            upper.push(dot / (norms[i] * norms[j]));
        }
    }
    Ok(upper)
}

fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        cov += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(Error::Undefined(
            "similarity structure has zero variance".into(),
        ));
    }
    Ok(cov / (va.sqrt() * vb.sqrt()))
}

/// Pearson correlation between the strictly-upper-triangular entries of the
/// two cosine similarity matrices (row i of each tensor describes item i).
pub fn rsa(features_a: &Tensor, features_b: &Tensor) -> Result<f64> {
    if features_a.rows() != features_b.rows() {
        return Err(Error::Usage(format!(
            "item counts differ: {} vs {}",
            features_a.rows(),
            features_b.rows()
        )));
    }
    if features_a.rows() < 3 {
        return Err(Error::Usage("rsa needs at least 3 items".into()));
    }
    let ua = cosine_rows(features_a)?;
    let ub = cosine_rows(features_b)?;
    pearson(&ua, &ub)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::tensor::init;

    #[test]
    fn self_similarity_is_one() {
        let x = init::normal::<f32>(&mut rng::rng(1), &[8, 5], 1.0);
        let r = rsa(&x, &x).unwrap();
        assert!((r - 1.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn symmetric_in_arguments() {
        let x = init::normal::<f32>(&mut rng::rng(2), &[8, 5], 1.0);
        let y = init::normal::<f32>(&mut rng::rng(3), &[8, 7], 1.0);
        let a = rsa(&x, &y).unwrap();
        let b = rsa(&y, &x).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_is_undefined() {
        // all rows identical -> all cosine sims equal -> zero variance
        let x = Tensor::from_vec(&[4, 3], vec![1.0; 12]).unwrap();
        let y = init::normal::<f32>(&mut rng::rng(4), &[4, 3], 1.0);
        assert!(matches!(rsa(&x, &y), Err(Error::Undefined(_))));
    }
}
