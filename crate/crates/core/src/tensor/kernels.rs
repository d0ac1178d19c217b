//! Shared compute kernels. Both the tape (training) and the tape-free
//! inference path call these, so the two paths produce bit-identical values.

use super::{Element, Tensor};

/// c[m×n] = a[m×k] · b[k×n]
pub(crate) fn matmul<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.rows(), a.cols());
    let (k2, n) = (b.rows(), b.cols());
    debug_assert_eq!(k, k2);
    let mut out = vec![E::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == E::zero() {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out).unwrap()
}

/// c[m×n] = a[m×k] · b[n×k]ᵀ
pub(crate) fn matmul_nt<E: Element>(a: &Tensor<E>, b: &Tensor<E>) -> Tensor<E> {
    let (m, k) = (a.rows(), a.cols());
    let (n, k2) = (b.rows(), b.cols());
    debug_assert_eq!(k, k2);
    let mut out = vec![E::zero(); m * n];
    let ad = a.data();
    let bd = b.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &bd[j * k..(j + 1) * k];
            let mut acc = E::zero();
            for (&av, &bv) in arow.iter().zip(brow) {
                acc = acc + av * bv;
            }
            out[i * n + j] = acc;
        }
    }
    Tensor::from_vec(&[m, n], out).unwrap()
}

/// c[k×n] += a[m×k]ᵀ · b[m×n]; used by matmul backward.
pub(crate) fn matmul_tn_acc<E: Element>(a: &Tensor<E>, b: &[E], n: usize, out: &mut [E]) {
    let (m, k) = (a.rows(), a.cols());
    debug_assert_eq!(b.len(), m * n);
    debug_assert_eq!(out.len(), k * n);
    let ad = a.data();
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            if av == E::zero() {
                continue;
            }
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
}

pub(crate) fn gelu_val<E: Element>(x: E) -> E {
    // tanh approximation; matches the derivative in gelu_grad.
    let c = E::fp(0.7978845608028654); // sqrt(2/pi)
    let a = E::fp(0.044715);
    let half = E::fp(0.5);
    let inner = c * (x + a * x * x * x);
    half * x * (E::one() + inner.tanh())
}

pub(crate) fn gelu_grad<E: Element>(x: E) -> E {
    let c = E::fp(0.7978845608028654);
    let a = E::fp(0.044715);
    let half = E::fp(0.5);
    let three = E::fp(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = E::one() - t * t;
    half * (E::one() + t) + half * x * sech2 * c * (E::one() + three * a * x * x)
}

/// Row-wise softmax over the last dimension, stabilized by max subtraction.
pub(crate) fn softmax_rows<E: Element>(a: &Tensor<E>) -> Tensor<E> {
    let (rows, cols) = (a.rows(), a.cols());
    let mut out = vec![E::zero(); rows * cols];
    for r in 0..rows {
        let src = &a.data()[r * cols..(r + 1) * cols];
        let dst = &mut out[r * cols..(r + 1) * cols];
        let mut mx = src[0];
        for &v in src.iter() {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = E::zero();
        for (d, &v) in dst.iter_mut().zip(src) {
            let e = (v - mx).exp();
            *d = e;
            sum = sum + e;
        }
        let inv = E::one() / sum;
        for d in dst.iter_mut() {
            *d = *d * inv;
        }
    }
    let mut t = Tensor::from_vec(&[rows, cols], out).unwrap();
    t = t.reshaped(a.shape()).unwrap();
    t
}

/// Row-wise layer norm over the last dimension. Returns (normalized, per-row
/// (mean, inv_std)); gain/bias are applied by the caller.
pub(crate) fn layernorm_rows<E: Element>(a: &Tensor<E>, eps: E) -> (Tensor<E>, Vec<(E, E)>) {
    let (rows, cols) = (a.rows(), a.cols());
    let mut out = vec![E::zero(); rows * cols];
    let mut cache = Vec::with_capacity(rows);
    let nf = E::fp(cols as f64);
    for r in 0..rows {
        let src = &a.data()[r * cols..(r + 1) * cols];
        let mean = src.iter().copied().sum::<E>() / nf;
        let mut var = E::zero();
        for &v in src {
            let d = v - mean;
            var = var + d * d;
        }
        var = var / nf;
        let inv_std = E::one() / (var + eps).sqrt();
        cache.push((mean, inv_std));
        let dst = &mut out[r * cols..(r + 1) * cols];
        for (d, &v) in dst.iter_mut().zip(src) {
            *d = (v - mean) * inv_std;
        }
    }
    (
        Tensor::from_vec(a.shape(), out).unwrap(),
        cache,
    )
}

/// y = x·gain + bias broadcast per row.
pub(crate) fn scale_shift_rows<E: Element>(a: &Tensor<E>, gain: &[E], bias: &[E]) -> Tensor<E> {
    let cols = a.cols();
    debug_assert_eq!(gain.len(), cols);
    debug_assert_eq!(bias.len(), cols);
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(cols) {
        for ((v, &g), &b) in row.iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    Tensor::from_vec(a.shape(), out).unwrap()
}

pub(crate) fn add_bias_rows<E: Element>(a: &Tensor<E>, bias: &[E]) -> Tensor<E> {
    let cols = a.cols();
    debug_assert_eq!(bias.len(), cols);
    let mut out = a.data().to_vec();
    for row in out.chunks_mut(cols) {
        for (v, &b) in row.iter_mut().zip(bias) {
            *v = *v + b;
        }
    }
    Tensor::from_vec(a.shape(), out).unwrap()
}
