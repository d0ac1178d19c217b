//! Dense row-major tensors with reverse-mode gradients.
//!
//! The engine is generic over the element type so that gradient checks can
//! run at `f64` while the rest of the stack stays at `f32`.

mod kernels;
mod optim;
mod params;
mod tape;

pub use optim::{clip_global_norm, AdamWConfig, AdamWState};
pub use params::{hex_digest, init, ParamStore};
pub use tape::{Grads, Reduction, Tape, Var};

use crate::error::{Error, Result};
use num_traits::Float;

/// Element type of a tensor. Implemented for `f32` (the product path) and
/// `f64` (gradient-check oracles).
pub trait Element:
    Float
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn fp(v: f64) -> Self;
    fn to_f64c(self) -> f64;
    fn write_le(self, out: &mut Vec<u8>);
}

impl Element for f32 {
    fn fp(v: f64) -> Self {
        v as f32
    }
    fn to_f64c(self) -> f64 {
        self as f64
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

impl Element for f64 {
    fn fp(v: f64) -> Self {
        v
    }
    fn to_f64c(self) -> f64 {
        self
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
}

/// Dense row-major tensor. The last dimension is the contiguous one; all
/// operations treat a tensor of rank > 2 as `[rows × cols]` with
/// `cols = shape.last()`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<E: Element = f32> {
    shape: Vec<usize>,
    data: Vec<E>,
    requires_grad: bool,
    grad: Option<Vec<E>>,
}

impl<E: Element> Tensor<E> {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![E::zero(); n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn filled(shape: &[usize], v: E) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![v; n],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn scalar(v: E) -> Self {
        Tensor::from_vec(&[1], vec![v]).unwrap()
    }

    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "shape {:?} wants {} elements, got {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Number of rows when viewed as a matrix (product of leading dims).
    pub fn rows(&self) -> usize {
        if self.shape.len() <= 1 {
            1
        } else {
            self.numel() / self.cols()
        }
    }

    /// Size of the last (contiguous) dimension.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    pub fn data(&self) -> &[E] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [E] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[E] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, on: bool) {
        self.requires_grad = on;
        if !on {
            self.grad = None;
        }
    }

    pub fn with_requires_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn grad(&self) -> Option<&[E]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> Option<&mut Vec<E>> {
        self.grad.as_mut()
    }

    /// Add `delta` into the grad buffer, allocating it on first use.
    /// No-op when the tensor does not track gradients.
    pub fn accumulate_grad(&mut self, delta: &[E]) {
        if !self.requires_grad {
            return;
        }
        debug_assert_eq!(delta.len(), self.data.len());
        let g = self
            .grad
            .get_or_insert_with(|| vec![E::zero(); self.data.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi = *gi + *di;
        }
    }

    pub fn zero_grad(&mut self) {
        if let Some(g) = self.grad.as_mut() {
            g.iter_mut().for_each(|v| *v = E::zero());
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Scalar value of a one-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }

    /// Reinterpret with a new shape of identical element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::Shape(format!(
                "cannot reshape {:?} to {:?}",
                self.shape, shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn to_f32(&self) -> Tensor<f32> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| v.to_f64c() as f32).collect(),
            requires_grad: false,
            grad: None,
        }
    }

    pub fn le_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.data.len() * std::mem::size_of::<E>());
        for &v in &self.data {
            v.write_le(&mut out);
        }
        out
    }
}

impl Tensor<f32> {
    pub fn from_f64_tensor(t: &Tensor<f64>) -> Self {
        t.to_f32()
    }
}

pub(crate) use kernels::*;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_checks_element_count() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
    }

    #[test]
    fn grad_accumulates_only_when_tracked() {
        let mut t = Tensor::<f32>::zeros(&[2]);
        t.accumulate_grad(&[1.0, 2.0]);
        assert!(t.grad().is_none());
        t.set_requires_grad(true);
        t.accumulate_grad(&[1.0, 2.0]);
        t.accumulate_grad(&[1.0, 2.0]);
        assert_eq!(t.grad().unwrap(), &[2.0, 4.0]);
    }
}
