//! Wengert tape: records operations during the forward pass, then walks
//! them in reverse to accumulate gradients.
//!
//! A tape borrows one or more [`ParamStore`]s. Leaves referencing store
//! entries marked trainable receive gradients; frozen entries and constants
//! do not (and no buffer is ever allocated for them). Nodes are appended in
//! execution order, so a single reverse sweep visits each exactly once.

use super::kernels;
use super::params::ParamStore;
use super::{Element, Tensor};
use crate::error::{Error, Result};
use crate::rng;
use rand::Rng;

/// Handle to a value on the tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

/// Loss reduction for `cross_entropy`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Mean over unmasked positions.
    Mean,
    /// Sum over unmasked positions (callers divide by a global token count).
    Sum,
}

enum Op<E: Element> {
    Matmul { a: usize, b: usize },
    MatmulNT { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddBias { a: usize, bias: usize },
    Mul { a: usize, b: usize },
    MulScalar { a: usize, s: usize },
    Scale { a: usize, c: E },
    Gelu { a: usize },
    Tanh { a: usize },
    Exp { a: usize },
    Softmax { a: usize },
    LayerNorm { a: usize, gain: usize, bias: usize, normed: Tensor<E>, cache: Vec<(E, E)> },
    Dropout { a: usize, mask: Vec<E> },
    Embedding { table: usize, ids: Vec<u32> },
    CrossEntropy { logits: usize, targets: Vec<u32>, mask: Vec<bool>, probs: Tensor<E>, reduction: Reduction },
    BceWithLogits { logits: usize, targets: Tensor<E> },
    ConcatRows { a: usize, b: usize },
    SliceRows { a: usize, start: usize },
    SliceCols { a: usize, start: usize },
    Reshape { a: usize },
    Transpose { a: usize },
    SumAll { a: usize },
    MeanRows { a: usize },
    MseMasked { pred: usize, target: Tensor<E>, rows: Vec<bool> },
    L2NormRows { a: usize, norms: Vec<E> },
}

enum NodeKind<E: Element> {
    Param { store: usize, idx: usize },
    Const(Tensor<E>),
    Computed { op: Op<E>, out: Tensor<E> },
}

struct Node<E: Element> {
    kind: NodeKind<E>,
    needs: bool,
}

/// Gradients for the trainable parameters touched by one backward pass,
/// indexed `[store][param]`.
pub struct Grads<E: Element> {
    by_store: Vec<Vec<Option<Vec<E>>>>,
}

impl<E: Element> Grads<E> {
    /// Accumulate into the grad buffers of `store` (which must be the store
    /// at `store_idx` when the tape was built).
    pub fn apply_to(&self, store_idx: usize, store: &mut ParamStore<E>) {
        for (idx, g) in self.by_store[store_idx].iter().enumerate() {
            if let Some(g) = g {
                store.tensor_mut(idx).accumulate_grad(g);
            }
        }
    }

    pub fn get(&self, store_idx: usize, param_idx: usize) -> Option<&[E]> {
        self.by_store
            .get(store_idx)
            .and_then(|s| s.get(param_idx))
            .and_then(|g| g.as_deref())
    }
}

pub struct Tape<'a, E: Element = f32> {
    stores: Vec<&'a ParamStore<E>>,
    nodes: Vec<Node<E>>,
    train: bool,
    step: u64,
    dropout_seed: u64,
}

impl<'a, E: Element> Tape<'a, E> {
    pub fn new(stores: &[&'a ParamStore<E>]) -> Self {
        Tape {
            stores: stores.to_vec(),
            nodes: Vec::new(),
            train: false,
            step: 0,
            dropout_seed: 0,
        }
    }

    /// Enable training mode: dropout becomes active, keyed by
    /// (seed, step, site) so replays are exact.
    pub fn train_mode(mut self, dropout_seed: u64, step: u64) -> Self {
        self.train = true;
        self.dropout_seed = dropout_seed;
        self.step = step;
        self
    }

    pub fn is_train(&self) -> bool {
        self.train
    }

    pub fn value(&self, v: Var) -> &Tensor<E> {
        match &self.nodes[v.0].kind {
            NodeKind::Param { store, idx } => self.stores[*store].tensor(*idx),
            NodeKind::Const(t) => t,
            NodeKind::Computed { out, .. } => out,
        }
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs
    }

    fn push(&mut self, kind: NodeKind<E>, needs: bool) -> Var {
        #[cfg(debug_assertions)]
        if let NodeKind::Computed { out, .. } = &kind {
            debug_assert!(out.is_finite(), "non-finite tensor produced on tape");
        }
        self.nodes.push(Node { kind, needs });
        Var(self.nodes.len() - 1)
    }

    /// Register a parameter leaf by name from store `store_idx`.
    pub fn param(&mut self, store_idx: usize, name: &str) -> Result<Var> {
        let idx = self.stores[store_idx]
            .index_of(name)
            .ok_or_else(|| Error::Lookup(format!("no parameter named {name}")))?;
        let needs = self.stores[store_idx].tensor(idx).requires_grad();
        Ok(self.push(NodeKind::Param { store: store_idx, idx }, needs))
    }

    /// Register a constant (input data, masks). Never receives gradient.
    pub fn constant(&mut self, t: Tensor<E>) -> Var {
        self.push(NodeKind::Const(t), false)
    }

    fn binary_shape_check(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(Error::Shape(format!(
                "matmul: inner dims {} vs {}",
                av.cols(),
                bv.rows()
            )));
        }
        let out = kernels::matmul(av, bv);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(NodeKind::Computed { op: Op::Matmul { a: a.0, b: b.0 }, out }, needs))
    }

    /// a[m×k] · b[n×k]ᵀ without materializing the transpose.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::Shape(format!(
                "matmul_nt: inner dims {} vs {}",
                av.cols(),
                bv.cols()
            )));
        }
        let out = kernels::matmul_nt(av, bv);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(NodeKind::Computed { op: Op::MatmulNT { a: a.0, b: b.0 }, out }, needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check(a, b, "add")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = *o + v;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(NodeKind::Computed { op: Op::Add { a: a.0, b: b.0 }, out }, needs))
    }

    /// Broadcast-add a row vector over every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        if self.value(bias).numel() != self.value(a).cols() {
            return Err(Error::Shape(format!(
                "add_bias: bias len {} vs cols {}",
                self.value(bias).numel(),
                self.value(a).cols()
            )));
        }
        let out = kernels::add_bias_rows(self.value(a), self.value(bias).data());
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(NodeKind::Computed { op: Op::AddBias { a: a.0, bias: bias.0 }, out }, needs))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary_shape_check(a, b, "mul")?;
        let mut out = self.value(a).clone();
        for (o, &v) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o = *o * v;
        }
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(NodeKind::Computed { op: Op::Mul { a: a.0, b: b.0 }, out }, needs))
    }

    /// Multiply every element of `a` by a one-element tensor `s` (which may
    /// be a trainable parameter, e.g. a learned temperature).
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        if self.value(s).numel() != 1 {
            return Err(Error::Shape(format!(
                "mul_scalar expects a one-element tensor, got {:?}",
                self.value(s).shape()
            )));
        }
        let sv = self.value(s).item();
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = *v * sv);
        let needs = self.needs(a) || self.needs(s);
        Ok(self.push(NodeKind::Computed { op: Op::MulScalar { a: a.0, s: s.0 }, out }, needs))
    }

    pub fn scale(&mut self, a: Var, c: E) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = *v * c);
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::Scale { a: a.0, c }, out }, needs)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = kernels::gelu_val(*v));
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::Gelu { a: a.0 }, out }, needs)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.tanh());
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::Tanh { a: a.0 }, out }, needs)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        out.data_mut().iter_mut().for_each(|v| *v = v.exp());
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::Exp { a: a.0 }, out }, needs)
    }

    /// Numerically stable softmax over the last dimension.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let out = kernels::softmax_rows(self.value(a));
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::Softmax { a: a.0 }, out }, needs)
    }

    /// Layer norm over the last dimension with learned gain and bias.
    pub fn layernorm_lastdim(&mut self, a: Var, gain: Var, bias: Var, eps: E) -> Result<Var> {
        let cols = self.value(a).cols();
        if self.value(gain).numel() != cols || self.value(bias).numel() != cols {
            return Err(Error::Shape(format!(
                "layernorm: gain/bias len {}/{} vs cols {}",
                self.value(gain).numel(),
                self.value(bias).numel(),
                cols
            )));
        }
        let (normed, cache) = kernels::layernorm_rows(self.value(a), eps);
        let out = kernels::scale_shift_rows(&normed, self.value(gain).data(), self.value(bias).data());
        let needs = self.needs(a) || self.needs(gain) || self.needs(bias);
        Ok(self.push(
            NodeKind::Computed {
                op: Op::LayerNorm { a: a.0, gain: gain.0, bias: bias.0, normed, cache },
                out,
            },
            needs,
        ))
    }

    /// Dropout with keep-scaling 1/(1−p). Active only in training mode; the
    /// mask stream is keyed by (seed, step, site) so replays are exact.
    pub fn dropout(&mut self, a: Var, p: f64, site: u64) -> Result<Var> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout p={p} outside [0,1)")));
        }
        if !self.train || p == 0.0 {
            return Ok(a);
        }
        let n = self.value(a).numel();
        let keep = E::fp(1.0 / (1.0 - p));
        let mut r = rng::keyed_rng(self.dropout_seed, &[self.step, site]);
        let mask: Vec<E> = (0..n)
            .map(|_| if r.gen::<f64>() < p { E::zero() } else { keep })
            .collect();
        let mut out = self.value(a).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o = *o * m;
        }
        let needs = self.needs(a);
        Ok(self.push(NodeKind::Computed { op: Op::Dropout { a: a.0, mask }, out }, needs))
    }

    /// Row gather: out[t] = table[ids[t]].
    pub fn embedding(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let t = self.value(table);
        let (v, d) = (t.rows(), t.cols());
        for &id in ids {
            if id as usize >= v {
                return Err(Error::Usage(format!("token id {id} out of range {v}")));
            }
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            data.extend_from_slice(t.row(id as usize));
        }
        let out = Tensor::from_vec(&[ids.len(), d], data).unwrap();
        let needs = self.needs(table);
        Ok(self.push(
            NodeKind::Computed { op: Op::Embedding { table: table.0, ids: ids.to_vec() }, out },
            needs,
        ))
    }

    /// Negative log-likelihood of `targets` under row-wise softmax of
    /// `logits`, over positions where `mask` is true.
    pub fn cross_entropy(
        &mut self,
        logits: Var,
        targets: &[u32],
        mask: &[bool],
        reduction: Reduction,
    ) -> Result<Var> {
        let lv = self.value(logits);
        let (rows, vocab) = (lv.rows(), lv.cols());
        if targets.len() != rows || mask.len() != rows {
            return Err(Error::Shape(format!(
                "cross_entropy: {rows} rows vs {} targets / {} mask",
                targets.len(),
                mask.len()
            )));
        }
        if targets.iter().zip(mask).any(|(&t, &m)| m && t as usize >= vocab) {
            return Err(Error::Usage("target id out of vocabulary range".into()));
        }
        let n_active = mask.iter().filter(|&&m| m).count();
        if n_active == 0 {
            return Err(Error::Usage("cross_entropy: all positions masked".into()));
        }
        let probs = kernels::softmax_rows(lv);
        let mut total = E::zero();
        for r in 0..rows {
            if mask[r] {
                let p = probs.row(r)[targets[r] as usize];
                total = total - p.max(E::fp(1e-30)).ln();
            }
        }
        let out = match reduction {
            Reduction::Sum => Tensor::scalar(total),
            Reduction::Mean => Tensor::scalar(total / E::fp(n_active as f64)),
        };
        let needs = self.needs(logits);
        Ok(self.push(
            NodeKind::Computed {
                op: Op::CrossEntropy {
                    logits: logits.0,
                    targets: targets.to_vec(),
                    mask: mask.to_vec(),
                    probs,
                    reduction,
                },
                out,
            },
            needs,
        ))
    }

    /// Mean binary cross-entropy of element-wise sigmoid(logits) against
    /// 0/1 targets, computed in the numerically stable form.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Tensor<E>) -> Result<Var> {
        let lv = self.value(logits);
        if lv.shape() != targets.shape() {
            return Err(Error::Shape(format!(
                "bce: {:?} vs {:?}",
                lv.shape(),
                targets.shape()
            )));
        }
        let mut total = E::zero();
        for (&z, &y) in lv.data().iter().zip(targets.data()) {
            // max(z,0) - z*y + ln(1 + exp(-|z|))
            total = total + z.max(E::zero()) - z * y + (E::one() + (-z.abs()).exp()).ln();
        }
        let n = E::fp(lv.numel() as f64);
        let out = Tensor::scalar(total / n);
        let needs = self.needs(logits);
        Ok(self.push(
            NodeKind::Computed {
                op: Op::BceWithLogits { logits: logits.0, targets: targets.clone() },
                out,
            },
            needs,
        ))
    }

    pub fn concat_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.cols() {
            return Err(Error::Shape(format!(
                "concat_rows: cols {} vs {}",
                av.cols(),
                bv.cols()
            )));
        }
        let cols = av.cols();
        let rows = av.rows() + bv.rows();
        let mut data = Vec::with_capacity(rows * cols);
        data.extend_from_slice(av.data());
        data.extend_from_slice(bv.data());
        let out = Tensor::from_vec(&[rows, cols], data).unwrap();
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(NodeKind::Computed { op: Op::ConcatRows { a: a.0, b: b.0 }, out }, needs))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if start + len > rows {
            return Err(Error::Shape(format!(
                "slice_rows: {start}+{len} > {rows}"
            )));
        }
        let data = av.data()[start * cols..(start + len) * cols].to_vec();
        let out = Tensor::from_vec(&[len, cols], data).unwrap();
        let needs = self.needs(a);
        Ok(self.push(NodeKind::Computed { op: Op::SliceRows { a: a.0, start }, out }, needs))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        if start + len > cols {
            return Err(Error::Shape(format!(
                "slice_cols: {start}+{len} > {cols}"
            )));
        }
        let mut data = Vec::with_capacity(rows * len);
        for r in 0..rows {
            let row = av.row(r);
            data.extend_from_slice(&row[start..start + len]);
        }
        let out = Tensor::from_vec(&[rows, len], data).unwrap();
        let needs = self.needs(a);
        Ok(self.push(NodeKind::Computed { op: Op::SliceCols { a: a.0, start }, out }, needs))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(NodeKind::Computed { op: Op::Reshape { a: a.0 }, out }, needs))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut data = vec![E::zero(); rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                data[c * rows + r] = av.data()[r * cols + c];
            }
        }
        let out = Tensor::from_vec(&[cols, rows], data).unwrap();
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::Transpose { a: a.0 }, out }, needs)
    }

    pub fn sum_all(&mut self, a: Var) -> Var {
        let total: E = self.value(a).data().iter().copied().sum();
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::SumAll { a: a.0 }, out: Tensor::scalar(total) }, needs)
    }

    /// Column means over rows: [m×d] → [1×d].
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let inv = E::fp(1.0 / rows.max(1) as f64);
        let mut data = vec![E::zero(); cols];
        for r in 0..rows {
            for (d, &v) in data.iter_mut().zip(av.row(r)) {
                *d = *d + v;
            }
        }
        data.iter_mut().for_each(|v| *v = *v * inv);
        let out = Tensor::from_vec(&[1, cols], data).unwrap();
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::MeanRows { a: a.0 }, out }, needs)
    }

    /// Mean squared error between `pred` and a constant `target`, over rows
    /// where `rows_mask` is true. With no rows masked in, falls back to all
    /// rows (autoencoding).
    pub fn mse_masked(&mut self, pred: Var, target: &Tensor<E>, rows_mask: &[bool]) -> Result<Var> {
        let pv = self.value(pred);
        if pv.shape() != target.shape() {
            return Err(Error::Shape(format!(
                "mse: {:?} vs {:?}",
                pv.shape(),
                target.shape()
            )));
        }
        if rows_mask.len() != pv.rows() {
            return Err(Error::Shape("mse: mask length != rows".into()));
        }
        let rows: Vec<bool> = if rows_mask.iter().any(|&m| m) {
            rows_mask.to_vec()
        } else {
            vec![true; rows_mask.len()]
        };
        let cols = pv.cols();
        let count = rows.iter().filter(|&&m| m).count() * cols;
        let mut total = E::zero();
        for (r, &m) in rows.iter().enumerate() {
            if m {
                for (&p, &t) in pv.row(r).iter().zip(target.row(r)) {
                    let d = p - t;
                    total = total + d * d;
                }
            }
        }
        let out = Tensor::scalar(total / E::fp(count as f64));
        let needs = self.needs(pred);
        Ok(self.push(
            NodeKind::Computed { op: Op::MseMasked { pred: pred.0, target: target.clone(), rows }, out },
            needs,
        ))
    }

    /// Normalize each row to unit L2 norm.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let av = self.value(a);
        let (rows, cols) = (av.rows(), av.cols());
        let mut data = Vec::with_capacity(rows * cols);
        let mut norms = Vec::with_capacity(rows);
        let eps = E::fp(1e-12);
        for r in 0..rows {
            let row = av.row(r);
            let n = row.iter().map(|&v| v * v).sum::<E>().sqrt().max(eps);
            norms.push(n);
            data.extend(row.iter().map(|&v| v / n));
        }
        let out = Tensor::from_vec(&[rows, cols], data).unwrap();
        let needs = self.needs(a);
        self.push(NodeKind::Computed { op: Op::L2NormRows { a: a.0, norms }, out }, needs)
    }

    /// Names of all trainable parameter leaves registered on this tape.
    pub fn trainable_leaves(&self) -> Vec<String> {
        let mut names = Vec::new();
        for node in &self.nodes {
            if let NodeKind::Param { store, idx } = node.kind {
                if self.stores[store].tensor(idx).requires_grad() {
                    names.push(self.stores[store].name(idx).to_string());
                }
            }
        }
        names.sort();
        names.dedup();
        names
    }

    /// Reverse sweep from a scalar `loss`, seeding with gradient 1.
    pub fn backward(&self, loss: Var) -> Result<Grads<E>> {
        self.backward_scaled(loss, E::one())
    }

    /// Reverse sweep seeding d(loss) with `seed` (used for global token
    /// averaging across a batch of per-example tapes).
    pub fn backward_scaled(&self, loss: Var, seed: E) -> Result<Grads<E>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<E>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![seed]);

        for i in (0..=loss.0).rev() {
            if grads[i].is_none() || !self.nodes[i].needs {
                continue;
            }
            let g_out = grads[i].take().unwrap();
            let op = match &self.nodes[i].kind {
                NodeKind::Computed { op, .. } => op,
                _ => {
                    grads[i] = Some(g_out);
                    continue;
                }
            };
            macro_rules! acc {
                ($id:expr, $compute:expr) => {
                    if self.nodes[$id].needs {
                        let delta: Vec<E> = $compute;
                        match &mut grads[$id] {
                            Some(existing) => {
                                for (e, d) in existing.iter_mut().zip(&delta) {
                                    *e = *e + *d;
                                }
                            }
                            slot => *slot = Some(delta),
                        }
                    }
                };
            }
            match op {
                Op::Matmul { a, b } => {
                    let av = self.value(Var(*a));
                    let bv = self.value(Var(*b));
                    let n = bv.cols();
                    let gt = Tensor::from_vec(&[av.rows(), n], g_out.clone()).unwrap();
                    acc!(*a, kernels::matmul_nt(&gt, bv).data().to_vec());
                    acc!(*b, {
                        let mut gb = vec![E::zero(); bv.numel()];
                        kernels::matmul_tn_acc(av, &g_out, n, &mut gb);
                        gb
                    });
                }
                Op::MatmulNT { a, b } => {
                    let av = self.value(Var(*a));
                    let bv = self.value(Var(*b));
                    let n = bv.rows();
                    let gt = Tensor::from_vec(&[av.rows(), n], g_out.clone()).unwrap();
                    acc!(*a, kernels::matmul(&gt, bv).data().to_vec());
                    acc!(*b, {
                        // dB = dCᵀ · A
                        let mut gb = vec![E::zero(); bv.numel()];
                        kernels::matmul_tn_acc(&gt, av.data(), av.cols(), &mut gb);
                        gb
                    });
                }
                Op::Add { a, b } => {
                    acc!(*a, g_out.clone());
                    acc!(*b, g_out.clone());
                }
                Op::AddBias { a, bias } => {
                    acc!(*a, g_out.clone());
                    acc!(*bias, {
                        let cols = self.value(Var(*bias)).numel();
                        let mut gb = vec![E::zero(); cols];
                        for row in g_out.chunks(cols) {
                            for (g, &v) in gb.iter_mut().zip(row) {
                                *g = *g + v;
                            }
                        }
                        gb
                    });
                }
                Op::Mul { a, b } => {
                    let av = self.value(Var(*a)).data();
                    let bv = self.value(Var(*b)).data();
                    acc!(*a, g_out.iter().zip(bv).map(|(&g, &v)| g * v).collect());
                    acc!(*b, g_out.iter().zip(av).map(|(&g, &v)| g * v).collect());
                }
                Op::MulScalar { a, s } => {
                    let sv = self.value(Var(*s)).item();
                    let av = self.value(Var(*a)).data();
                    acc!(*a, g_out.iter().map(|&g| g * sv).collect());
                    acc!(*s, {
                        let dot: E = g_out.iter().zip(av).map(|(&g, &v)| g * v).sum();
                        vec![dot]
                    });
                }
                Op::Scale { a, c } => {
                    acc!(*a, g_out.iter().map(|&g| g * *c).collect());
                }
                Op::Gelu { a } => {
                    let av = self.value(Var(*a)).data();
                    acc!(*a, g_out.iter().zip(av).map(|(&g, &x)| g * kernels::gelu_grad(x)).collect());
                }
                Op::Tanh { a } => {
                    let out = match &self.nodes[i].kind {
                        NodeKind::Computed { out, .. } => out.data(),
                        _ => unreachable!(),
                    };
                    acc!(*a, g_out.iter().zip(out).map(|(&g, &y)| g * (E::one() - y * y)).collect());
                }
                Op::Exp { a } => {
                    let out = match &self.nodes[i].kind {
                        NodeKind::Computed { out, .. } => out.data(),
                        _ => unreachable!(),
                    };
                    acc!(*a, g_out.iter().zip(out).map(|(&g, &y)| g * y).collect());
                }
                Op::Softmax { a } => {
                    let y = match &self.nodes[i].kind {
                        NodeKind::Computed { out, .. } => out,
                        _ => unreachable!(),
                    };
                    let cols = y.cols();
                    acc!(*a, {
                        let mut gx = vec![E::zero(); y.numel()];
                        for r in 0..y.rows() {
                            let yr = y.row(r);
                            let gr = &g_out[r * cols..(r + 1) * cols];
                            let dot: E = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                            let dst = &mut gx[r * cols..(r + 1) * cols];
                            for ((d, &y), &g) in dst.iter_mut().zip(yr).zip(gr) {
                                *d = y * (g - dot);
                            }
                        }
                        gx
                    });
                }
                Op::LayerNorm { a, gain, bias, normed, cache } => {
                    let cols = normed.cols();
                    let gv = self.value(Var(*gain)).data().to_vec();
                    acc!(*bias, {
                        let mut gb = vec![E::zero(); cols];
                        for row in g_out.chunks(cols) {
                            for (g, &v) in gb.iter_mut().zip(row) {
                                *g = *g + v;
                            }
                        }
                        gb
                    });
                    acc!(*gain, {
                        let mut gg = vec![E::zero(); cols];
                        for (r, row) in g_out.chunks(cols).enumerate() {
                            let nr = normed.row(r);
                            for ((g, &v), &x) in gg.iter_mut().zip(row).zip(nr) {
                                *g = *g + v * x;
                            }
                        }
                        gg
                    });
                    acc!(*a, {
                        let nf = E::fp(cols as f64);
                        let mut gx = vec![E::zero(); normed.numel()];
                        for (r, row) in g_out.chunks(cols).enumerate() {
                            let nr = normed.row(r);
                            let (_, inv_std) = cache[r];
                            // dxhat = g_out * gain
                            let dxhat: Vec<E> = row.iter().zip(&gv).map(|(&g, &w)| g * w).collect();
                            let mean_dx: E = dxhat.iter().copied().sum::<E>() / nf;
                            let mean_dx_x: E =
                                dxhat.iter().zip(nr).map(|(&d, &x)| d * x).sum::<E>() / nf;
                            let dst = &mut gx[r * cols..(r + 1) * cols];
                            for ((d, &dx), &x) in dst.iter_mut().zip(&dxhat).zip(nr) {
                                *d = (dx - mean_dx - x * mean_dx_x) * inv_std;
                            }
                        }
                        gx
                    });
                }
                Op::Dropout { a, mask } => {
                    acc!(*a, g_out.iter().zip(mask).map(|(&g, &m)| g * m).collect());
                }
                Op::Embedding { table, ids } => {
                    acc!(*table, {
                        let t = self.value(Var(*table));
                        let d = t.cols();
                        let mut gt = vec![E::zero(); t.numel()];
                        for (pos, &id) in ids.iter().enumerate() {
                            let src = &g_out[pos * d..(pos + 1) * d];
                            let dst = &mut gt[id as usize * d..(id as usize + 1) * d];
                            for (g, &v) in dst.iter_mut().zip(src) {
                                *g = *g + v;
                            }
                        }
                        gt
                    });
                }
                Op::CrossEntropy { logits, targets, mask, probs, reduction } => {
                    let gl = g_out[0];
                    let n_active = mask.iter().filter(|&&m| m).count();
                    let scale = match reduction {
                        Reduction::Sum => gl,
                        Reduction::Mean => gl / E::fp(n_active as f64),
                    };
                    acc!(*logits, {
                        let vocab = probs.cols();
                        let mut g = vec![E::zero(); probs.numel()];
                        for r in 0..probs.rows() {
                            if !mask[r] {
                                continue;
                            }
                            let pr = probs.row(r);
                            let dst = &mut g[r * vocab..(r + 1) * vocab];
                            for (d, &p) in dst.iter_mut().zip(pr) {
                                *d = p * scale;
                            }
                            dst[targets[r] as usize] = dst[targets[r] as usize] - scale;
                        }
                        g
                    });
                }
                Op::BceWithLogits { logits, targets } => {
                    let gl = g_out[0];
                    acc!(*logits, {
                        let lv = self.value(Var(*logits));
                        let inv_n = E::fp(1.0 / lv.numel() as f64) * gl;
                        lv.data()
                            .iter()
                            .zip(targets.data())
                            .map(|(&z, &y)| {
                                let sig = E::one() / (E::one() + (-z).exp());
                                (sig - y) * inv_n
                            })
                            .collect()
                    });
                }
                Op::ConcatRows { a, b } => {
                    let an = self.value(Var(*a)).numel();
                    acc!(*a, g_out[..an].to_vec());
                    acc!(*b, g_out[an..].to_vec());
                }
                Op::SliceRows { a, start } => {
                    acc!(*a, {
                        let av = self.value(Var(*a));
                        let cols = av.cols();
                        let mut g = vec![E::zero(); av.numel()];
                        g[start * cols..start * cols + g_out.len()].copy_from_slice(&g_out);
                        g
                    });
                }
                Op::SliceCols { a, start } => {
                    acc!(*a, {
                        let av = self.value(Var(*a));
                        let cols = av.cols();
                        let len = g_out.len() / av.rows();
                        let mut g = vec![E::zero(); av.numel()];
                        for r in 0..av.rows() {
                            let src = &g_out[r * len..(r + 1) * len];
                            g[r * cols + start..r * cols + start + len].copy_from_slice(src);
                        }
                        g
                    });
                }
                Op::Reshape { a } => {
                    acc!(*a, g_out.clone());
                }
                Op::Transpose { a } => {
                    acc!(*a, {
                        let av = self.value(Var(*a));
                        let (rows, cols) = (av.rows(), av.cols());
                        let mut g = vec![E::zero(); rows * cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                g[r * cols + c] = g_out[c * rows + r];
                            }
                        }
                        g
                    });
                }
                Op::SumAll { a } => {
                    let n = self.value(Var(*a)).numel();
                    acc!(*a, vec![g_out[0]; n]);
                }
                Op::MeanRows { a } => {
                    acc!(*a, {
                        let av = self.value(Var(*a));
                        let (rows, cols) = (av.rows(), av.cols());
                        let inv = E::fp(1.0 / rows.max(1) as f64);
                        let mut g = vec![E::zero(); rows * cols];
                        for r in 0..rows {
                            for c in 0..cols {
                                g[r * cols + c] = g_out[c] * inv;
                            }
                        }
                        g
                    });
                }
                Op::MseMasked { pred, target, rows } => {
                    let gl = g_out[0];
                    acc!(*pred, {
                        let pv = self.value(Var(*pred));
                        let cols = pv.cols();
                        let count = rows.iter().filter(|&&m| m).count() * cols;
                        let two_over = E::fp(2.0 / count as f64) * gl;
                        let mut g = vec![E::zero(); pv.numel()];
                        for (r, &m) in rows.iter().enumerate() {
                            if m {
                                let dst = &mut g[r * cols..(r + 1) * cols];
                                for ((d, &p), &t) in dst.iter_mut().zip(pv.row(r)).zip(target.row(r)) {
                                    *d = (p - t) * two_over;
                                }
                            }
                        }
                        g
                    });
                }
                Op::L2NormRows { a, norms } => {
                    let y = match &self.nodes[i].kind {
                        NodeKind::Computed { out, .. } => out,
                        _ => unreachable!(),
                    };
                    let cols = y.cols();
                    acc!(*a, {
                        let mut g = vec![E::zero(); y.numel()];
                        for r in 0..y.rows() {
                            let yr = y.row(r);
                            let gr = &g_out[r * cols..(r + 1) * cols];
                            let dot: E = yr.iter().zip(gr).map(|(&y, &g)| y * g).sum();
                            let inv_n = E::one() / norms[r];
                            let dst = &mut g[r * cols..(r + 1) * cols];
                            for ((d, &gv), &yv) in dst.iter_mut().zip(gr).zip(yr) {
                                *d = (gv - yv * dot) * inv_n;
                            }
                        }
                        g
                    });
                }
            }
        }

        // Collect per-store grads from param leaves.
        let mut by_store: Vec<Vec<Option<Vec<E>>>> = self
            .stores
            .iter()
            .map(|s| (0..s.len()).map(|_| None).collect())
            .collect();
        for (i, node) in self.nodes.iter().enumerate() {
            if let NodeKind::Param { store, idx } = node.kind {
                if let Some(g) = grads[i].take() {
                    match &mut by_store[store][idx] {
                        Some(existing) => {
                            for (e, d) in existing.iter_mut().zip(&g) {
                                *e = *e + *d;
                            }
                        }
                        slot => *slot = Some(g),
                    }
                }
            }
        }
        Ok(Grads { by_store })
    }
}
