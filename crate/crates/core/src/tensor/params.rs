//! Named parameter collections with content hashing.

use super::{Element, Tensor};
use crate::error::{Error, Result};
use sha2::{Digest, Sha256};
use std::collections::HashMap;

/// An ordered, named set of parameter tensors. Iteration order is insertion
/// order; hashing and serialization sort by name so identity is independent
/// of construction order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<E: Element = f32> {
    names: Vec<String>,
    tensors: Vec<Tensor<E>>,
    by_name: HashMap<String, usize>,
}

impl<E: Element> ParamStore<E> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            by_name: HashMap::new(),
        }
    }

    /// Insert a trainable parameter.
    pub fn insert(&mut self, name: &str, mut tensor: Tensor<E>) {
        tensor.set_requires_grad(true);
        self.insert_raw(name, tensor)
    }

    /// Insert without touching the requires_grad flag.
    pub fn insert_raw(&mut self, name: &str, tensor: Tensor<E>) {
        assert!(
            !self.by_name.contains_key(name),
            "duplicate parameter {name}"
        );
        self.by_name.insert(name.to_string(), self.names.len());
        self.names.push(name.to_string());
        self.tensors.push(tensor);
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn tensor(&self, idx: usize) -> &Tensor<E> {
        &self.tensors[idx]
    }

    pub fn tensor_mut(&mut self, idx: usize) -> &mut Tensor<E> {
        &mut self.tensors[idx]
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<E>> {
        self.index_of(name)
            .map(|i| &self.tensors[i])
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<E>> {
        let i = self
            .index_of(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name}")))?;
        Ok(&mut self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<E>)> {
        self.names
            .iter()
            .map(|n| n.as_str())
            .zip(self.tensors.iter())
    }

    /// Mark every tensor frozen (no gradients, grad buffers dropped).
    pub fn freeze_all(&mut self) {
        for t in &mut self.tensors {
            t.set_requires_grad(false);
        }
    }

    pub fn trainable_names(&self) -> Vec<String> {
        let mut v: Vec<String> = self
            .iter()
            .filter(|(_, t)| t.requires_grad())
            .map(|(n, _)| n.to_string())
            .collect();
        v.sort();
        v
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// SHA-256 over (name, shape, little-endian payload) in name order.
    pub fn content_hash(&self) -> String {
        let mut order: Vec<usize> = (0..self.names.len()).collect();
        order.sort_by(|&a, &b| self.names[a].cmp(&self.names[b]));
        let mut h = Sha256::new();
        for i in order {
            h.update(self.names[i].as_bytes());
            for &d in self.tensors[i].shape() {
                h.update((d as u32).to_le_bytes());
            }
            h.update(self.tensors[i].le_bytes());
        }
        hex_digest(&h.finalize())
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.is_finite())
    }
}

pub fn hex_digest(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        s.push_str(&format!("{b:02x}"));
    }
    s
}

/// Weight initializers. All draw from an explicit RNG; there is no ambient
/// randomness anywhere in the crate.
pub mod init {
    use super::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    /// N(0, std²).
    pub fn normal<E: Element>(rng: &mut ChaCha8Rng, shape: &[usize], std: f64) -> Tensor<E> {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                // Box-Muller keeps us off rand_distr for one distribution.
                let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                let u2: f64 = rng.gen_range(0.0..1.0);
                let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
                E::fp(z * std)
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    /// N(0, 1/fan_in) — fan-in-scaled Gaussian for linear layers.
    pub fn fan_in<E: Element>(rng: &mut ChaCha8Rng, fan_in: usize, shape: &[usize]) -> Tensor<E> {
        normal(rng, shape, 1.0 / (fan_in as f64).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hash_is_order_independent_but_value_sensitive() {
        let mut a = ParamStore::<f32>::new();
        a.insert("w", Tensor::filled(&[2, 2], 1.0));
        a.insert("b", Tensor::filled(&[2], 0.5));
        let mut b = ParamStore::<f32>::new();
        b.insert("b", Tensor::filled(&[2], 0.5));
        b.insert("w", Tensor::filled(&[2, 2], 1.0));
        assert_eq!(a.content_hash(), b.content_hash());

        b.get_mut("w").unwrap().data_mut()[0] = 2.0;
        assert_ne!(a.content_hash(), b.content_hash());
    }

    #[test]
    fn freeze_drops_grad_tracking() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Tensor::filled(&[2], 1.0));
        assert_eq!(s.trainable_names(), vec!["w".to_string()]);
        s.freeze_all();
        assert!(s.trainable_names().is_empty());
    }
}
