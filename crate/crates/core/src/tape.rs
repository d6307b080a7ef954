//! Tape-based reverse-mode automatic differentiation over dense f64
//! tensors.
//!
//! A [`Tape`] records every operation of one forward pass in append
//! order; [`Tape::backward`] replays the records in reverse, so each
//! node is visited exactly once and every input was appended before its
//! consumers. Parameters enter a tape as leaves via [`Tape::param`] and
//! their gradients flow back into the [`ParamStore`] through
//! [`Tape::accumulate_param_grads`], which is what lets one tape per
//! sample accumulate into a shared batch gradient.

use crate::error::{Error, Result};
use crate::params::{ParamId, ParamStore};
use crate::rng::SeededRng;
use crate::tensor::Tensor;

/// Handle to a node on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorRef(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Sigmoid,
    Relu,
}

enum Op {
    Leaf { param: Option<ParamId> },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    AddN { parts: Vec<usize> },
    Affine { a: usize, scale: f64 },
    Matmul { a: usize, b: usize },
    MatVec { m: usize, v: usize },
    Transpose { a: usize },
    Concat { parts: Vec<usize> },
    Slice { a: usize, start: usize },
    StackRows { parts: Vec<usize> },
    GatherRows { m: usize, indices: Vec<usize> },
    MeanValidRows { a: usize, valid: usize },
    Tanh { a: usize },
    Sigmoid { a: usize },
    Relu { a: usize },
    RowSoftmaxMasked { a: usize, valid: usize },
    Sum { a: usize },
    LogClamped { a: usize, floor: f64 },
    Conv1d { input: usize, kernels: usize, bias: usize, stride: usize },
    MaxPool1d { a: usize, argmax: Vec<usize> },
    Dropout { a: usize, mask: Vec<f64> },
}

struct Node {
    value: Vec<f64>,
    shape: Vec<usize>,
    grad: Vec<f64>,
    requires_grad: bool,
    op: Op,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    // one leaf per parameter per tape, so recurrent layers share it
    param_leaves: std::collections::HashMap<usize, usize>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, t: TensorRef) -> &[f64] {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: TensorRef) -> &[usize] {
        &self.nodes[t.0].shape
    }

    pub fn grad(&self, t: TensorRef) -> &[f64] {
        &self.nodes[t.0].grad
    }

    /// Copies a node out as a plain tensor.
    pub fn tensor(&self, t: TensorRef) -> Tensor {
        Tensor::new(self.nodes[t.0].shape.clone(), self.nodes[t.0].value.clone())
            .expect("tape node is shape-consistent")
    }

    fn push(&mut self, value: Vec<f64>, shape: Vec<usize>, requires_grad: bool, op: Op) -> TensorRef {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = vec![0.0; value.len()];
        self.nodes.push(Node {
            value,
            shape,
            grad,
            requires_grad,
            op,
        });
        TensorRef(self.nodes.len() - 1)
    }

    fn needs_grad(&self, ids: &[usize]) -> bool {
        ids.iter().any(|&i| self.nodes[i].requires_grad)
    }

    // ── Leaves ───────────────────────────────────────────────────────

    /// Constant leaf: no gradient flows into it.
    pub fn constant(&mut self, t: &Tensor) -> TensorRef {
        self.push(t.data().to_vec(), t.shape().to_vec(), false, Op::Leaf { param: None })
    }

    /// Differentiable leaf that is not a stored parameter (used by the
    /// finite-difference checks).
    pub fn var(&mut self, t: &Tensor) -> TensorRef {
        self.push(t.data().to_vec(), t.shape().to_vec(), true, Op::Leaf { param: None })
    }

    /// Differentiable leaf bound to a stored parameter. Repeated calls
    /// on one tape return the same leaf.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> TensorRef {
        if let Some(&idx) = self.param_leaves.get(&id.0) {
            return TensorRef(idx);
        }
        let p = store.get(id);
        let leaf = self.push(
            p.value.data().to_vec(),
            p.value.shape().to_vec(),
            true,
            Op::Leaf { param: Some(id) },
        );
        self.param_leaves.insert(id.0, leaf.0);
        leaf
    }

    pub fn zeros(&mut self, shape: Vec<usize>) -> TensorRef {
        let numel = shape.iter().product();
        self.push(vec![0.0; numel], shape, false, Op::Leaf { param: None })
    }

    // ── Elementwise ──────────────────────────────────────────────────

    fn check_same_shape(&self, op: &'static str, a: TensorRef, b: TensorRef) -> Result<()> {
        if self.nodes[a.0].shape != self.nodes[b.0].shape {
            return Err(Error::DimMismatch {
                op,
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape("add", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(value, shape, rg, Op::Add { a: a.0, b: b.0 }))
    }

    pub fn sub(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape("sub", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x - y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(value, shape, rg, Op::Sub { a: a.0, b: b.0 }))
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        self.check_same_shape("mul", a, b)?;
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&self.nodes[b.0].value)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(value, shape, rg, Op::Mul { a: a.0, b: b.0 }))
    }

    pub fn add_n(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        let first = *parts
            .first()
            .ok_or(Error::EmptySequence { what: "add_n" })?;
        for p in parts {
            self.check_same_shape("add_n", first, *p)?;
        }
        let mut value = vec![0.0; self.nodes[first.0].value.len()];
        for p in parts {
            for (acc, v) in value.iter_mut().zip(&self.nodes[p.0].value) {
                *acc += v;
            }
        }
        let shape = self.nodes[first.0].shape.clone();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(value, shape, rg, Op::AddN { parts: ids }))
    }

    /// `scale * a + shift`, elementwise.
    pub fn affine(&mut self, a: TensorRef, scale: f64, shift: f64) -> TensorRef {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|x| scale * x + shift).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, shape, rg, Op::Affine { a: a.0, scale })
    }

    pub fn one_minus(&mut self, a: TensorRef) -> TensorRef {
        self.affine(a, -1.0, 1.0)
    }

    // ── Linear algebra ───────────────────────────────────────────────

    fn dims2(&self, op: &'static str, t: TensorRef) -> Result<(usize, usize)> {
        match self.nodes[t.0].shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            other => Err(Error::DimMismatch {
                op,
                lhs: other.to_vec(),
                rhs: vec![],
            }),
        }
    }

    pub fn matmul(&mut self, a: TensorRef, b: TensorRef) -> Result<TensorRef> {
        let (m, k) = self.dims2("matmul", a)?;
        let (k2, n) = self.dims2("matmul", b)?;
        if k != k2 {
            return Err(Error::DimMismatch {
                op: "matmul",
                lhs: self.nodes[a.0].shape.clone(),
                rhs: self.nodes[b.0].shape.clone(),
            });
        }
        let av = &self.nodes[a.0].value;
        let bv = &self.nodes[b.0].value;
        let mut value = vec![0.0; m * n];
        for i in 0..m {
            for p in 0..k {
                let aip = av[i * k + p];
                let brow = &bv[p * n..(p + 1) * n];
                let crow = &mut value[i * n..(i + 1) * n];
                for (c, bv) in crow.iter_mut().zip(brow) {
                    *c += aip * bv;
                }
            }
        }
        let rg = self.needs_grad(&[a.0, b.0]);
        Ok(self.push(value, vec![m, n], rg, Op::Matmul { a: a.0, b: b.0 }))
    }

    /// Matrix-vector product `m[r,c] * v[c] -> [r]`.
    pub fn matvec(&mut self, m: TensorRef, v: TensorRef) -> Result<TensorRef> {
        let (rows, cols) = self.dims2("matvec", m)?;
        if self.nodes[v.0].shape != [cols] {
            return Err(Error::DimMismatch {
                op: "matvec",
                lhs: self.nodes[m.0].shape.clone(),
                rhs: self.nodes[v.0].shape.clone(),
            });
        }
        let mv = &self.nodes[m.0].value;
        let vv = &self.nodes[v.0].value;
        let value: Vec<f64> = (0..rows)
            .map(|i| {
                mv[i * cols..(i + 1) * cols]
                    .iter()
                    .zip(vv)
                    .map(|(w, x)| w * x)
                    .sum()
            })
            .collect();
        let rg = self.needs_grad(&[m.0, v.0]);
        Ok(self.push(value, vec![rows], rg, Op::MatVec { m: m.0, v: v.0 }))
    }

    pub fn transpose(&mut self, a: TensorRef) -> Result<TensorRef> {
        let (r, c) = self.dims2("transpose", a)?;
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                value[j * r + i] = av[i * c + j];
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, vec![c, r], rg, Op::Transpose { a: a.0 }))
    }

    // ── Shape manipulation ───────────────────────────────────────────

    /// Concatenation of vectors into one vector.
    pub fn concat(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(Error::EmptySequence { what: "concat" });
        }
        let mut value = Vec::new();
        for p in parts {
            value.extend_from_slice(&self.nodes[p.0].value);
        }
        let len = value.len();
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(value, vec![len], rg, Op::Concat { parts: ids }))
    }

    /// Contiguous slice of the flat storage, yielding a vector.
    pub fn slice(&mut self, a: TensorRef, start: usize, len: usize) -> Result<TensorRef> {
        if start + len > self.nodes[a.0].value.len() {
            return Err(Error::contract(format!(
                "slice [{start}, {}) out of bounds for {} elements",
                start + len,
                self.nodes[a.0].value.len()
            )));
        }
        let value = self.nodes[a.0].value[start..start + len].to_vec();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, vec![len], rg, Op::Slice { a: a.0, start }))
    }

    /// Row `r` of a matrix as a vector.
    pub fn row(&mut self, a: TensorRef, r: usize) -> Result<TensorRef> {
        let (_rows, cols) = self.dims2("row", a)?;
        self.slice(a, r * cols, cols)
    }

    /// Rows `[start, start+n)` of a matrix as an `[n, cols]` matrix.
    pub fn slice_rows(&mut self, a: TensorRef, start: usize, n: usize) -> Result<TensorRef> {
        let (rows, cols) = self.dims2("slice_rows", a)?;
        if start + n > rows {
            return Err(Error::contract(format!(
                "slice_rows [{start}, {}) out of bounds for {rows} rows",
                start + n
            )));
        }
        let flat = self.slice(a, start * cols, n * cols)?;
        self.nodes[flat.0].shape = vec![n, cols];
        Ok(flat)
    }

    /// Stacks equal-length vectors as leading rows of a `[rows, c]`
    /// matrix; rows beyond `parts.len()` stay zero.
    pub fn stack_rows(&mut self, parts: &[TensorRef], rows: usize) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(Error::EmptySequence { what: "stack_rows" });
        }
        if parts.len() > rows {
            return Err(Error::contract(format!(
                "stack_rows: {} parts exceed {} rows",
                parts.len(),
                rows
            )));
        }
        let cols = self.nodes[parts[0].0].value.len();
        let mut value = vec![0.0; rows * cols];
        for (i, p) in parts.iter().enumerate() {
            let pv = &self.nodes[p.0].value;
            if pv.len() != cols {
                return Err(Error::DimMismatch {
                    op: "stack_rows",
                    lhs: vec![cols],
                    rhs: self.nodes[p.0].shape.clone(),
                });
            }
            value[i * cols..(i + 1) * cols].copy_from_slice(pv);
        }
        let ids: Vec<usize> = parts.iter().map(|p| p.0).collect();
        let rg = self.needs_grad(&ids);
        Ok(self.push(value, vec![rows, cols], rg, Op::StackRows { parts: ids }))
    }

    /// Row lookup (embedding gather). Repeated indices accumulate
    /// gradient into the same source row.
    pub fn gather_rows(&mut self, m: TensorRef, indices: &[usize]) -> Result<TensorRef> {
        let (rows, cols) = self.dims2("gather_rows", m)?;
        if indices.is_empty() {
            return Err(Error::EmptySequence { what: "gather_rows" });
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::contract(format!(
                "gather_rows: index {bad} out of range for {rows} rows"
            )));
        }
        let mv = &self.nodes[m.0].value;
        let mut value = Vec::with_capacity(indices.len() * cols);
        for &r in indices {
            value.extend_from_slice(&mv[r * cols..(r + 1) * cols]);
        }
        let rg = self.nodes[m.0].requires_grad;
        Ok(self.push(
            value,
            vec![indices.len(), cols],
            rg,
            Op::GatherRows {
                m: m.0,
                indices: indices.to_vec(),
            },
        ))
    }

    /// Mean of the first `valid` rows of a matrix.
    pub fn mean_valid_rows(&mut self, a: TensorRef, valid: usize) -> Result<TensorRef> {
        let (rows, cols) = self.dims2("mean_valid_rows", a)?;
        if valid == 0 {
            return Err(Error::EmptySequence {
                what: "mean_valid_rows",
            });
        }
        if valid > rows {
            return Err(Error::contract(format!(
                "mean_valid_rows: valid {valid} exceeds {rows} rows"
            )));
        }
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; cols];
        for r in 0..valid {
            for (acc, v) in value.iter_mut().zip(&av[r * cols..(r + 1) * cols]) {
                *acc += v;
            }
        }
        for v in &mut value {
            *v /= valid as f64;
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, vec![cols], rg, Op::MeanValidRows { a: a.0, valid }))
    }

    /// Elementwise mean of a non-empty list of equal-shape vectors.
    pub fn average_pool(&mut self, parts: &[TensorRef]) -> Result<TensorRef> {
        if parts.is_empty() {
            return Err(Error::EmptySequence {
                what: "average_pool",
            });
        }
        let stacked = self.stack_rows(parts, parts.len())?;
        self.mean_valid_rows(stacked, parts.len())
    }

    // ── Nonlinearities ───────────────────────────────────────────────

    pub fn tanh(&mut self, a: TensorRef) -> TensorRef {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.tanh()).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, shape, rg, Op::Tanh { a: a.0 })
    }

    pub fn sigmoid(&mut self, a: TensorRef) -> TensorRef {
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .map(|&x| {
                // split by sign to avoid overflow in exp
                if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                }
            })
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, shape, rg, Op::Sigmoid { a: a.0 })
    }

    pub fn relu(&mut self, a: TensorRef) -> TensorRef {
        let value: Vec<f64> = self.nodes[a.0].value.iter().map(|x| x.max(0.0)).collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, shape, rg, Op::Relu { a: a.0 })
    }

    pub fn activation(&mut self, a: TensorRef, kind: Activation) -> TensorRef {
        match kind {
            Activation::Tanh => self.tanh(a),
            Activation::Sigmoid => self.sigmoid(a),
            Activation::Relu => self.relu(a),
        }
    }

    /// Per-row softmax over the first `valid` columns, computed with
    /// max-subtraction. Columns at or beyond `valid` get weight exactly
    /// zero and receive no gradient.
    pub fn row_softmax_masked(&mut self, a: TensorRef, valid: usize) -> Result<TensorRef> {
        let (rows, cols) = match self.nodes[a.0].shape.as_slice() {
            [n] => (1usize, *n),
            [r, c] => (*r, *c),
            other => {
                return Err(Error::DimMismatch {
                    op: "row_softmax_masked",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if valid == 0 || valid > cols {
            return Err(Error::contract(format!(
                "row_softmax_masked: valid {valid} out of range for {cols} columns"
            )));
        }
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &av[r * cols..r * cols + valid];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (j, &x) in row.iter().enumerate() {
                let e = (x - max).exp();
                value[r * cols + j] = e;
                sum += e;
            }
            for j in 0..valid {
                value[r * cols + j] /= sum;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(
            value,
            self.nodes[a.0].shape.clone(),
            rg,
            Op::RowSoftmaxMasked { a: a.0, valid },
        ))
    }

    /// Softmax of a vector over all entries.
    pub fn softmax(&mut self, a: TensorRef) -> Result<TensorRef> {
        let n = self.nodes[a.0].value.len();
        self.row_softmax_masked(a, n.max(1).min(n))
    }

    // ── Reductions and scalar ops ────────────────────────────────────

    pub fn sum(&mut self, a: TensorRef) -> TensorRef {
        let value = vec![self.nodes[a.0].value.iter().sum()];
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, vec![], rg, Op::Sum { a: a.0 })
    }

    /// `ln(max(x, floor))` elementwise; no gradient where clamped.
    pub fn log_clamped(&mut self, a: TensorRef, floor: f64) -> TensorRef {
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .map(|x| x.max(floor).ln())
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        self.push(value, shape, rg, Op::LogClamped { a: a.0, floor })
    }

    // ── Structured ops ───────────────────────────────────────────────

    /// Valid (no-pad) 1-D cross-correlation.
    ///
    /// `input` is `[t, c_in]`, `kernels` `[w, c_in, c_out]`, `bias`
    /// `[c_out]`; the output is `[t', c_out]` with
    /// `t' = (t - w)/stride + 1`.
    pub fn conv1d(
        &mut self,
        input: TensorRef,
        kernels: TensorRef,
        bias: TensorRef,
        stride: usize,
    ) -> Result<TensorRef> {
        let (t, c_in) = self.dims2("conv1d", input)?;
        let (w, kc_in, c_out) = match self.nodes[kernels.0].shape.as_slice() {
            [w, ci, co] => (*w, *ci, *co),
            other => {
                return Err(Error::DimMismatch {
                    op: "conv1d",
                    lhs: other.to_vec(),
                    rhs: vec![],
                })
            }
        };
        if kc_in != c_in || self.nodes[bias.0].shape != [c_out] {
            return Err(Error::DimMismatch {
                op: "conv1d",
                lhs: self.nodes[input.0].shape.clone(),
                rhs: self.nodes[kernels.0].shape.clone(),
            });
        }
        if stride == 0 {
            return Err(Error::contract("conv1d: stride must be >= 1"));
        }
        if t < w {
            return Err(Error::SequenceTooShort {
                what: "conv1d",
                needed: w,
                got: t,
            });
        }
        let t_out = (t - w) / stride + 1;
        let iv = &self.nodes[input.0].value;
        let kv = &self.nodes[kernels.0].value;
        let bv = &self.nodes[bias.0].value;
        let mut value = vec![0.0; t_out * c_out];
        for p in 0..t_out {
            let out_row = &mut value[p * c_out..(p + 1) * c_out];
            out_row.copy_from_slice(bv);
            for dw in 0..w {
                let in_row = &iv[(p * stride + dw) * c_in..(p * stride + dw + 1) * c_in];
                for (ci, &x) in in_row.iter().enumerate() {
                    let krow = &kv[(dw * c_in + ci) * c_out..(dw * c_in + ci + 1) * c_out];
                    for (o, &kw) in out_row.iter_mut().zip(krow) {
                        *o += x * kw;
                    }
                }
            }
        }
        let rg = self.needs_grad(&[input.0, kernels.0, bias.0]);
        Ok(self.push(
            value,
            vec![t_out, c_out],
            rg,
            Op::Conv1d {
                input: input.0,
                kernels: kernels.0,
                bias: bias.0,
                stride,
            },
        ))
    }

    /// Per-channel windowed maximum; the gradient routes to the first
    /// maximal position in each window.
    pub fn max_pool1d(&mut self, a: TensorRef, window: usize, stride: usize) -> Result<TensorRef> {
        let (t, c) = self.dims2("max_pool1d", a)?;
        if window == 0 || stride == 0 {
            return Err(Error::contract("max_pool1d: window and stride must be >= 1"));
        }
        if t < window {
            return Err(Error::SequenceTooShort {
                what: "max_pool1d",
                needed: window,
                got: t,
            });
        }
        let t_out = (t - window) / stride + 1;
        let av = &self.nodes[a.0].value;
        let mut value = vec![0.0; t_out * c];
        let mut argmax = vec![0usize; t_out * c];
        for p in 0..t_out {
            for ch in 0..c {
                let mut best = f64::NEG_INFINITY;
                let mut best_at = 0;
                for dw in 0..window {
                    let idx = (p * stride + dw) * c + ch;
                    if av[idx] > best {
                        best = av[idx];
                        best_at = idx;
                    }
                }
                value[p * c + ch] = best;
                argmax[p * c + ch] = best_at;
            }
        }
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, vec![t_out, c], rg, Op::MaxPool1d { a: a.0, argmax }))
    }

    /// Inverted dropout: zeroes each element with probability `rate`
    /// and scales survivors by `1/(1-rate)` at training time; the
    /// identity at inference.
    pub fn dropout(
        &mut self,
        a: TensorRef,
        rate: f64,
        training: bool,
        rng: &mut SeededRng,
    ) -> Result<TensorRef> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::contract(format!(
                "dropout rate {rate} outside [0, 1)"
            )));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep_scale = 1.0 / (1.0 - rate);
        let mask: Vec<f64> = (0..self.nodes[a.0].value.len())
            .map(|_| if rng.uniform() < rate { 0.0 } else { keep_scale })
            .collect();
        let value: Vec<f64> = self.nodes[a.0]
            .value
            .iter()
            .zip(&mask)
            .map(|(x, m)| x * m)
            .collect();
        let shape = self.nodes[a.0].shape.clone();
        let rg = self.nodes[a.0].requires_grad;
        Ok(self.push(value, shape, rg, Op::Dropout { a: a.0, mask }))
    }

    // ── Backward ─────────────────────────────────────────────────────

    /// Reverse sweep from a scalar loss. Leaf gradients accumulate
    /// across repeated calls; intermediate gradients are recomputed
    /// fresh on every call.
    pub fn backward(&mut self, loss: TensorRef) -> Result<()> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss.0].shape
            )));
        }
        for node in &mut self.nodes {
            if !matches!(node.op, Op::Leaf { .. }) {
                node.grad.iter_mut().for_each(|g| *g = 0.0);
            }
        }
        self.nodes[loss.0].grad[0] += 1.0;
        for i in (0..self.nodes.len()).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.step_backward(i);
        }
        Ok(())
    }

    fn add_grad(&mut self, target: usize, contribution: &[f64]) {
        if !self.nodes[target].requires_grad {
            return;
        }
        for (g, c) in self.nodes[target].grad.iter_mut().zip(contribution) {
            *g += c;
        }
    }

    fn step_backward(&mut self, i: usize) {
        // Contributions are computed into fresh buffers first; inputs
        // always precede node i on the tape.
        enum Contrib {
            None,
            One(usize, Vec<f64>),
            Many(Vec<(usize, Vec<f64>)>),
        }
        let contrib = {
            let node = &self.nodes[i];
            let go = &node.grad;
            match &node.op {
                Op::Leaf { .. } => Contrib::None,
                Op::Add { a, b } => {
                    Contrib::Many(vec![(*a, go.clone()), (*b, go.clone())])
                }
                Op::Sub { a, b } => {
                    let neg: Vec<f64> = go.iter().map(|g| -g).collect();
                    Contrib::Many(vec![(*a, go.clone()), (*b, neg)])
                }
                Op::Mul { a, b } => {
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let da: Vec<f64> = go.iter().zip(bv).map(|(g, y)| g * y).collect();
                    let db: Vec<f64> = go.iter().zip(av).map(|(g, x)| g * x).collect();
                    Contrib::Many(vec![(*a, da), (*b, db)])
                }
                Op::AddN { parts } => {
                    Contrib::Many(parts.iter().map(|&p| (p, go.clone())).collect())
                }
                Op::Affine { a, scale } => {
                    let da: Vec<f64> = go.iter().map(|g| g * scale).collect();
                    Contrib::One(*a, da)
                }
                Op::Matmul { a, b } => {
                    // dA = dC Bᵀ, dB = Aᵀ dC
                    let (m, k) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                    let n = self.nodes[*b].shape[1];
                    let av = &self.nodes[*a].value;
                    let bv = &self.nodes[*b].value;
                    let mut out = Vec::with_capacity(2);
                    if self.nodes[*a].requires_grad {
                        let mut da = vec![0.0; m * k];
                        for i_ in 0..m {
                            for p in 0..k {
                                let mut s = 0.0;
                                for j in 0..n {
                                    s += go[i_ * n + j] * bv[p * n + j];
                                }
                                da[i_ * k + p] = s;
                            }
                        }
                        out.push((*a, da));
                    }
                    if self.nodes[*b].requires_grad {
                        let mut db = vec![0.0; k * n];
                        for p in 0..k {
                            for i_ in 0..m {
                                let aip = av[i_ * k + p];
                                for j in 0..n {
                                    db[p * n + j] += aip * go[i_ * n + j];
                                }
                            }
                        }
                        out.push((*b, db));
                    }
                    Contrib::Many(out)
                }
                Op::MatVec { m, v } => {
                    let (rows, cols) = (self.nodes[*m].shape[0], self.nodes[*m].shape[1]);
                    let mv = &self.nodes[*m].value;
                    let vv = &self.nodes[*v].value;
                    let mut out = Vec::with_capacity(2);
                    if self.nodes[*m].requires_grad {
                        let mut dm = vec![0.0; rows * cols];
                        for r in 0..rows {
                            let g = go[r];
                            for c in 0..cols {
                                dm[r * cols + c] = g * vv[c];
                            }
                        }
                        out.push((*m, dm));
                    }
                    if self.nodes[*v].requires_grad {
                        let mut dv = vec![0.0; cols];
                        for r in 0..rows {
                            let g = go[r];
                            for c in 0..cols {
                                dv[c] += g * mv[r * cols + c];
                            }
                        }
                        out.push((*v, dv));
                    }
                    Contrib::Many(out)
                }
                Op::Transpose { a } => {
                    let (r, c) = (self.nodes[*a].shape[0], self.nodes[*a].shape[1]);
                    let mut da = vec![0.0; r * c];
                    for i_ in 0..r {
                        for j in 0..c {
                            da[i_ * c + j] = go[j * r + i_];
                        }
                    }
                    Contrib::One(*a, da)
                }
                Op::Concat { parts } => {
                    let mut out = Vec::with_capacity(parts.len());
                    let mut offset = 0;
                    for &p in parts {
                        let len = self.nodes[p].value.len();
                        out.push((p, go[offset..offset + len].to_vec()));
                        offset += len;
                    }
                    Contrib::Many(out)
                }
                Op::Slice { a, start } => {
                    let mut da = vec![0.0; self.nodes[*a].value.len()];
                    da[*start..*start + go.len()].copy_from_slice(go);
                    Contrib::One(*a, da)
                }
                Op::StackRows { parts } => {
                    let cols = self.nodes[i].shape[1];
                    let mut out = Vec::with_capacity(parts.len());
                    for (r, &p) in parts.iter().enumerate() {
                        out.push((p, go[r * cols..(r + 1) * cols].to_vec()));
                    }
                    Contrib::Many(out)
                }
                Op::GatherRows { m, indices } => {
                    let cols = self.nodes[i].shape[1];
                    let mut dm = vec![0.0; self.nodes[*m].value.len()];
                    for (r, &src) in indices.iter().enumerate() {
                        for c in 0..cols {
                            dm[src * cols + c] += go[r * cols + c];
                        }
                    }
                    Contrib::One(*m, dm)
                }
                Op::MeanValidRows { a, valid } => {
                    let cols = self.nodes[i].shape[0];
                    let scale = 1.0 / *valid as f64;
                    let mut da = vec![0.0; self.nodes[*a].value.len()];
                    for r in 0..*valid {
                        for c in 0..cols {
                            da[r * cols + c] = go[c] * scale;
                        }
                    }
                    Contrib::One(*a, da)
                }
                Op::Tanh { a } => {
                    let y = &self.nodes[i].value;
                    let da: Vec<f64> = go.iter().zip(y).map(|(g, y)| g * (1.0 - y * y)).collect();
                    Contrib::One(*a, da)
                }
                Op::Sigmoid { a } => {
                    let y = &self.nodes[i].value;
                    let da: Vec<f64> = go.iter().zip(y).map(|(g, y)| g * y * (1.0 - y)).collect();
                    Contrib::One(*a, da)
                }
                Op::Relu { a } => {
                    let x = &self.nodes[*a].value;
                    let da: Vec<f64> = go
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > 0.0 { *g } else { 0.0 })
                        .collect();
                    Contrib::One(*a, da)
                }
                Op::RowSoftmaxMasked { a, valid } => {
                    let (rows, cols) = match self.nodes[i].shape.as_slice() {
                        [n] => (1usize, *n),
                        [r, c] => (*r, *c),
                        _ => unreachable!(),
                    };
                    let y = &self.nodes[i].value;
                    let mut da = vec![0.0; rows * cols];
                    for r in 0..rows {
                        let base = r * cols;
                        let mut dot = 0.0;
                        for j in 0..*valid {
                            dot += go[base + j] * y[base + j];
                        }
                        for j in 0..*valid {
                            da[base + j] = y[base + j] * (go[base + j] - dot);
                        }
                    }
                    Contrib::One(*a, da)
                }
                Op::Sum { a } => {
                    let g = go[0];
                    Contrib::One(*a, vec![g; self.nodes[*a].value.len()])
                }
                Op::LogClamped { a, floor } => {
                    let x = &self.nodes[*a].value;
                    let da: Vec<f64> = go
                        .iter()
                        .zip(x)
                        .map(|(g, x)| if *x > *floor { g / x } else { 0.0 })
                        .collect();
                    Contrib::One(*a, da)
                }
                Op::Conv1d {
                    input,
                    kernels,
                    bias,
                    stride,
                } => {
                    let (_t, c_in) = (self.nodes[*input].shape[0], self.nodes[*input].shape[1]);
                    let (w, c_out) = (self.nodes[*kernels].shape[0], self.nodes[*kernels].shape[2]);
                    let t_out = self.nodes[i].shape[0];
                    let iv = &self.nodes[*input].value;
                    let kv = &self.nodes[*kernels].value;
                    let mut out = Vec::with_capacity(3);
                    if self.nodes[*bias].requires_grad {
                        let mut db = vec![0.0; c_out];
                        for p in 0..t_out {
                            for co in 0..c_out {
                                db[co] += go[p * c_out + co];
                            }
                        }
                        out.push((*bias, db));
                    }
                    if self.nodes[*kernels].requires_grad {
                        let mut dk = vec![0.0; kv.len()];
                        for p in 0..t_out {
                            let grow = &go[p * c_out..(p + 1) * c_out];
                            for dw in 0..w {
                                let irow = &iv[(p * stride + dw) * c_in..(p * stride + dw + 1) * c_in];
                                for (ci, &x) in irow.iter().enumerate() {
                                    let krow =
                                        &mut dk[(dw * c_in + ci) * c_out..(dw * c_in + ci + 1) * c_out];
                                    for (kd, &g) in krow.iter_mut().zip(grow) {
                                        *kd += x * g;
                                    }
                                }
                            }
                        }
                        out.push((*kernels, dk));
                    }
                    if self.nodes[*input].requires_grad {
                        let mut di = vec![0.0; iv.len()];
                        for p in 0..t_out {
                            let grow = &go[p * c_out..(p + 1) * c_out];
                            for dw in 0..w {
                                let base = (p * stride + dw) * c_in;
                                for ci in 0..c_in {
                                    let krow =
                                        &kv[(dw * c_in + ci) * c_out..(dw * c_in + ci + 1) * c_out];
                                    let mut s = 0.0;
                                    for (kw, &g) in krow.iter().zip(grow) {
                                        s += kw * g;
                                    }
                                    di[base + ci] += s;
                                }
                            }
                        }
                        out.push((*input, di));
                    }
                    Contrib::Many(out)
                }
                Op::MaxPool1d { a, argmax, .. } => {
                    let mut da = vec![0.0; self.nodes[*a].value.len()];
                    for (out_idx, &src) in argmax.iter().enumerate() {
                        da[src] += go[out_idx];
                    }
                    Contrib::One(*a, da)
                }
                Op::Dropout { a, mask } => {
                    let da: Vec<f64> = go.iter().zip(mask).map(|(g, m)| g * m).collect();
                    Contrib::One(*a, da)
                }
            }
        };
        match contrib {
            Contrib::None => {}
            Contrib::One(target, c) => self.add_grad(target, &c),
            Contrib::Many(list) => {
                for (target, c) in list {
                    self.add_grad(target, &c);
                }
            }
        }
    }

    /// Adds `scale` times each parameter leaf's gradient into the
    /// store. Call once per tape after `backward`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore, scale: f64) {
        for node in &self.nodes {
            if let Op::Leaf { param: Some(id) } = node.op {
                let p = store.get_mut(id);
                for (g, ng) in p.grad.iter_mut().zip(&node.grad) {
                    *g += scale * ng;
                }
            }
        }
    }
}
