use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use crate::kernels::{self, sigmoid};
use crate::param::{ParamId, ParamStore};
use crate::{Real, Result, Tensor, TensorError};

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

pub const RMS_EPS: f64 = 1e-6;
pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: u64,
    idx: usize,
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    /// `alpha * a . b^T`
    MatMulBt(Var, Var, T),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Sigmoid(Var),
    Silu(Var),
    Tanh(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sparsemax(Var),
    Entmax15(Var),
    /// Entries outside the per-row top-k set to `-inf`.
    TopKMask(Var),
    /// Entries outside the per-row top-k set to zero (no renormalization).
    TopKZero(Var, Vec<bool>),
    MaskFill(Var, Vec<bool>),
    RmsNorm { x: Var, gain: Var, inv_rms: Vec<T> },
    LayerNorm { x: Var, gain: Var, bias: Var, inv_std: Vec<T>, xhat: Vec<T> },
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    GatherRows(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
    WeightedSum(Var, Vec<T>),
}

struct Node<'a, T: Real> {
    value: Cow<'a, [T]>,
    rows: usize,
    cols: usize,
    op: Op<T>,
}

/// Records operations for a single forward pass; [`Tape::backward`] runs
/// once. Parameters are borrowed from a [`ParamStore`] without copying.
pub struct Tape<'a, T: Real> {
    id: u64,
    nodes: Vec<Node<'a, T>>,
    spent: bool,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Grads<T> {
    tape: u64,
    node_grads: Vec<Option<Vec<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Real> Grads<T> {
    pub fn wrt(&self, v: Var) -> Option<&[T]> {
        if v.tape != self.tape {
            return None;
        }
        self.node_grads.get(v.idx)?.as_deref()
    }

    /// Adds `scale * dL/dp` into `acc` for every parameter registered on the
    /// tape. `acc` is indexed by [`ParamId`].
    pub fn accumulate_params(&self, acc: &mut [Vec<T>], scale: T) {
        for &(pid, node) in &self.params {
            if let Some(g) = &self.node_grads[node] {
                kernels::axpy(scale, g, &mut acc[pid.index()]);
            }
        }
    }
}

impl<'a, T: Real> Default for Tape<'a, T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            spent: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Cow<'a, [T]>, rows: usize, cols: usize, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
        });
        Var {
            tape: self.id,
            idx: self.nodes.len() - 1,
        }
    }

    fn node(&self, v: Var) -> Result<&Node<'a, T>> {
        if v.tape != self.id {
            return Err(TensorError::ForeignVar);
        }
        Ok(&self.nodes[v.idx])
    }

    pub fn value(&self, v: Var) -> Result<&[T]> {
        Ok(&self.node(v)?.value)
    }

    pub fn dims(&self, v: Var) -> Result<(usize, usize)> {
        let n = self.node(v)?;
        Ok((n.rows, n.cols))
    }

    pub fn to_tensor(&self, v: Var) -> Result<Tensor<T>> {
        let n = self.node(v)?;
        Tensor::matrix(n.rows, n.cols, n.value.to_vec())
    }

    /// Constant input; receives a gradient but is not a parameter.
    pub fn leaf(&mut self, t: Tensor<T>) -> Result<Var> {
        let (r, c) = t.dims2()?;
        Ok(self.push(Cow::Owned(t.into_data()), r, c, Op::Leaf))
    }

    pub fn leaf_slice(&mut self, rows: usize, cols: usize, data: Vec<T>) -> Result<Var> {
        if data.len() != rows * cols {
            return Err(TensorError::BadLength {
                len: data.len(),
                shape: vec![rows, cols],
            });
        }
        Ok(self.push(Cow::Owned(data), rows, cols, Op::Leaf))
    }

    pub fn param(&mut self, store: &'a ParamStore<T>, id: ParamId) -> Result<Var> {
        let t = store.get(id);
        let (r, c) = t.dims2()?;
        Ok(self.push(Cow::Borrowed(t.data()), r, c, Op::Param(id)))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if (na.rows, na.cols) != (nb.rows, nb.cols) {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: vec![na.rows, na.cols],
                rhs: vec![nb.rows, nb.cols],
            });
        }
        Ok((na.rows, na.cols))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.cols != nb.rows {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                lhs: vec![na.rows, na.cols],
                rhs: vec![nb.rows, nb.cols],
            });
        }
        let (m, k, n) = (na.rows, na.cols, nb.cols);
        let out = kernels::matmul(&na.value, &nb.value, m, k, n);
        Ok(self.push(Cow::Owned(out), m, n, Op::MatMul(a, b)))
    }

    /// `alpha * a . b^T`
    pub fn matmul_bt(&mut self, a: Var, b: Var, alpha: T) -> Result<Var> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.cols != nb.cols {
            return Err(TensorError::ShapeMismatch {
                op: "matmul_bt",
                lhs: vec![na.rows, na.cols],
                rhs: vec![nb.rows, nb.cols],
            });
        }
        let (m, k, n) = (na.rows, na.cols, nb.rows);
        let mut out = vec![T::zero(); m * n];
        kernels::matmul_bt_acc(&na.value, &nb.value, &mut out, m, k, n, alpha);
        Ok(self.push(Cow::Owned(out), m, n, Op::MatMulBt(a, b, alpha)))
    }

    fn zip(&mut self, op: &'static str, a: Var, b: Var, f: impl Fn(T, T) -> T, mk: Op<T>) -> Result<Var> {
        let (r, c) = self.same_shape(op, a, b)?;
        let out: Vec<T> = {
            let (va, vb) = (&self.nodes[a.idx].value, &self.nodes[b.idx].value);
            va.iter().zip(vb.iter()).map(|(x, y)| f(*x, *y)).collect()
        };
        Ok(self.push(Cow::Owned(out), r, c, mk))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (na, nr) = (self.node(a)?, self.node(row)?);
        if nr.rows != 1 || nr.cols != na.cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_row",
                lhs: vec![na.rows, na.cols],
                rhs: vec![nr.rows, nr.cols],
            });
        }
        let (r, c) = (na.rows, na.cols);
        let mut out = na.value.to_vec();
        for chunk in out.chunks_exact_mut(c) {
            for (o, b) in chunk.iter_mut().zip(nr.value.iter()) {
                *o += *b;
            }
        }
        Ok(self.push(Cow::Owned(out), r, c, Op::AddRow(a, row)))
    }

    fn map(&mut self, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let n = self.node(a)?;
        let (r, c) = (n.rows, n.cols);
        let out: Vec<T> = n.value.iter().map(|x| f(*x)).collect();
        Ok(self.push(Cow::Owned(out), r, c, op))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Result<Var> {
        self.map(a, |x| x * s, Op::Scale(a, s))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.map(a, sigmoid, Op::Sigmoid(a))
    }

    pub fn silu(&mut self, a: Var) -> Result<Var> {
        self.map(a, |x| x * sigmoid(x), Op::Silu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.map(a, T::tanh, Op::Tanh(a))
    }

    fn rowwise(
        &mut self,
        a: Var,
        f: impl Fn(usize, &mut [T]) -> Result<()>,
        op: Op<T>,
    ) -> Result<Var> {
        let n = self.node(a)?;
        let (r, c) = (n.rows, n.cols);
        let mut out = n.value.to_vec();
        if c > 0 {
            for (i, row) in out.chunks_exact_mut(c).enumerate() {
                f(i, row)?;
            }
        }
        Ok(self.push(Cow::Owned(out), r, c, op))
    }

    /// Row-wise softmax; `-inf` entries get exactly zero weight.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(
            a,
            |i, row| {
                if kernels::softmax_row(row) {
                    Ok(())
                } else {
                    Err(TensorError::EmptySupport { row: i })
                }
            },
            Op::Softmax(a),
        )
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(
            a,
            |i, row| {
                if kernels::log_softmax_row(row) {
                    Ok(())
                } else {
                    Err(TensorError::EmptySupport { row: i })
                }
            },
            Op::LogSoftmax(a),
        )
    }

    pub fn sparsemax(&mut self, a: Var) -> Result<Var> {
        self.rowwise(
            a,
            |_, row| {
                kernels::sparsemax_row(row);
                Ok(())
            },
            Op::Sparsemax(a),
        )
    }

    pub fn entmax15(&mut self, a: Var) -> Result<Var> {
        self.rowwise(
            a,
            |_, row| {
                kernels::entmax15_row(row);
                Ok(())
            },
            Op::Entmax15(a),
        )
    }

    /// Keeps the `k` largest entries of each row, the rest become `-inf`.
    pub fn topk_mask(&mut self, a: Var, k: usize) -> Result<Var> {
        self.rowwise(
            a,
            |_, row| {
                crate::ops::topk_mask_row(row, k);
                Ok(())
            },
            Op::TopKMask(a),
        )
    }

    /// Keeps the `k` largest entries of each row, the rest become zero.
    pub fn topk_zero(&mut self, a: Var, k: usize) -> Result<Var> {
        let n = self.node(a)?;
        let (r, c) = (n.rows, n.cols);
        let mut keep = vec![false; r * c];
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            let row = &n.value[i * c..(i + 1) * c];
            for j in kernels::topk_indices(row, k) {
                keep[i * c + j] = true;
                out[i * c + j] = row[j];
            }
        }
        Ok(self.push(Cow::Owned(out), r, c, Op::TopKZero(a, keep)))
    }

    /// Sets entries with `keep == false` to `-inf`.
    pub fn mask_fill(&mut self, a: Var, keep: Vec<bool>) -> Result<Var> {
        let n = self.node(a)?;
        if keep.len() != n.value.len() {
            return Err(TensorError::BadLength {
                len: keep.len(),
                shape: vec![n.rows, n.cols],
            });
        }
        let (r, c) = (n.rows, n.cols);
        let out: Vec<T> = n
            .value
            .iter()
            .zip(&keep)
            .map(|(v, k)| if *k { *v } else { T::neg_infinity() })
            .collect();
        Ok(self.push(Cow::Owned(out), r, c, Op::MaskFill(a, keep)))
    }

    /// Row-wise `x / sqrt(mean(x^2) + eps) * gain`.
    pub fn rms_norm(&mut self, x: Var, gain: Var) -> Result<Var> {
        let (nx, ng) = (self.node(x)?, self.node(gain)?);
        if ng.rows != 1 || ng.cols != nx.cols {
            return Err(TensorError::ShapeMismatch {
                op: "rms_norm",
                lhs: vec![nx.rows, nx.cols],
                rhs: vec![ng.rows, ng.cols],
            });
        }
        let (r, c) = (nx.rows, nx.cols);
        let eps = T::cast(RMS_EPS);
        let mut out = vec![T::zero(); r * c];
        let mut inv_rms = Vec::with_capacity(r);
        for i in 0..r {
            let row = &nx.value[i * c..(i + 1) * c];
            let ms = kernels::dot(row, row) / T::cast(c as f64);
            let inv = T::one() / (ms + eps).sqrt();
            inv_rms.push(inv);
            for j in 0..c {
                out[i * c + j] = row[j] * inv * ng.value[j];
            }
        }
        Ok(self.push(Cow::Owned(out), r, c, Op::RmsNorm { x, gain, inv_rms }))
    }

    /// Row-wise layer normalization with affine gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var> {
        let (nx, ng, nb) = (self.node(x)?, self.node(gain)?, self.node(bias)?);
        if ng.rows != 1 || ng.cols != nx.cols || nb.rows != 1 || nb.cols != nx.cols {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                lhs: vec![nx.rows, nx.cols],
                rhs: vec![ng.rows, ng.cols],
            });
        }
        let (r, c) = (nx.rows, nx.cols);
        let cf = T::cast(c as f64);
        let eps = T::cast(LAYER_NORM_EPS);
        let mut out = vec![T::zero(); r * c];
        let mut xhat = vec![T::zero(); r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &nx.value[i * c..(i + 1) * c];
            let mean = row.iter().copied().sum::<T>() / cf;
            let var = row.iter().map(|v| (*v - mean) * (*v - mean)).sum::<T>() / cf;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for j in 0..c {
                let h = (row[j] - mean) * inv;
                xhat[i * c + j] = h;
                out[i * c + j] = h * ng.value[j] + nb.value[j];
            }
        }
        Ok(self.push(
            Cow::Owned(out),
            r,
            c,
            Op::LayerNorm {
                x,
                gain,
                bias,
                inv_std,
                xhat,
            },
        ))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = self.node(parts[0])?.cols;
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            let n = self.node(p)?;
            if n.cols != c {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_rows",
                    lhs: vec![r, c],
                    rhs: vec![n.rows, n.cols],
                });
            }
            out.extend_from_slice(&n.value);
            r += n.rows;
        }
        Ok(self.push(Cow::Owned(out), r, c, Op::ConcatRows(parts.to_vec())))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = self.node(parts[0])?.rows;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let n = self.node(p)?;
            if n.rows != r {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    lhs: vec![r],
                    rhs: vec![n.rows, n.cols],
                });
            }
            widths.push(n.cols);
        }
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                let n = &self.nodes[p.idx];
                out.extend_from_slice(&n.value[i * n.cols..(i + 1) * n.cols]);
            }
        }
        Ok(self.push(Cow::Owned(out), r, c, Op::ConcatCols(parts.to_vec())))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.node(a)?;
        if start + len > n.rows {
            return Err(TensorError::OutOfBounds {
                index: start + len,
                len: n.rows,
            });
        }
        let c = n.cols;
        let out = n.value[start * c..(start + len) * c].to_vec();
        Ok(self.push(Cow::Owned(out), len, c, Op::SliceRows(a, start)))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let n = self.node(a)?;
        if start + len > n.cols {
            return Err(TensorError::OutOfBounds {
                index: start + len,
                len: n.cols,
            });
        }
        let (r, c) = (n.rows, n.cols);
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&n.value[i * c + start..i * c + start + len]);
        }
        Ok(self.push(Cow::Owned(out), r, len, Op::SliceCols(a, start)))
    }

    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var> {
        let n = self.node(a)?;
        let c = n.cols;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            if i >= n.rows {
                return Err(TensorError::OutOfBounds { index: i, len: n.rows });
            }
            out.extend_from_slice(&n.value[i * c..(i + 1) * c]);
        }
        Ok(self.push(Cow::Owned(out), rows.len(), c, Op::GatherRows(a, rows.to_vec())))
    }

    /// One entry per row: `out[i] = a[i, cols[i]]`, shape `r x 1`.
    pub fn pick(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let n = self.node(a)?;
        if cols.len() != n.rows {
            return Err(TensorError::BadLength {
                len: cols.len(),
                shape: vec![n.rows, n.cols],
            });
        }
        let mut out = Vec::with_capacity(n.rows);
        for (i, &j) in cols.iter().enumerate() {
            if j >= n.cols {
                return Err(TensorError::OutOfBounds { index: j, len: n.cols });
            }
            out.push(n.value[i * n.cols + j]);
        }
        let r = n.rows;
        Ok(self.push(Cow::Owned(out), r, 1, Op::Pick(a, cols.to_vec())))
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s: T = self.node(a)?.value.iter().copied().sum();
        Ok(self.push(Cow::Owned(vec![s]), 1, 1, Op::Sum(a)))
    }

    /// `sum_i w_i a_i` with constant weights.
    pub fn weighted_sum(&mut self, a: Var, w: Vec<T>) -> Result<Var> {
        let n = self.node(a)?;
        if w.len() != n.value.len() {
            return Err(TensorError::BadLength {
                len: w.len(),
                shape: vec![n.rows, n.cols],
            });
        }
        let s = kernels::dot(&n.value, &w);
        Ok(self.push(Cow::Owned(vec![s]), 1, 1, Op::WeightedSum(a, w)))
    }

    /// Reverse sweep from a scalar. A tape can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Grads<T>> {
        let n = self.node(loss)?;
        if n.rows * n.cols != 1 {
            return Err(TensorError::NonScalarLoss(vec![n.rows, n.cols]));
        }
        if self.spent {
            return Err(TensorError::AlreadyBackpropagated);
        }
        self.spent = true;

        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[loss.idx] = Some(vec![T::one()]);
        for idx in (0..=loss.idx).rev() {
            let Some(g) = grads[idx].take() else { continue };
            self.backprop_node(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(p) => Some((p, i)),
                _ => None,
            })
            .collect();
        Ok(Grads {
            tape: self.id,
            node_grads: grads,
            params,
        })
    }

    fn backprop_node(&self, idx: usize, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let node = &self.nodes[idx];
        let (r, c) = (node.rows, node.cols);
        let y = &node.value;
        let val = |v: Var| -> &[T] { &self.nodes[v.idx].value };
        let dims = |v: Var| (self.nodes[v.idx].rows, self.nodes[v.idx].cols);

        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            &Op::MatMul(a, b) => {
                let (m, k) = dims(a);
                let n = dims(b).1;
                kernels::matmul_bt_acc(g, val(b), slot(grads, a, m * k), m, n, k, T::one());
                kernels::matmul_at_acc(val(a), g, slot(grads, b, k * n), m, k, n, T::one());
            }
            &Op::MatMulBt(a, b, alpha) => {
                let (m, k) = dims(a);
                let n = dims(b).0;
                // out = alpha a b^T: da = alpha g b, db = alpha g^T a
                kernels::matmul_acc(g, val(b), slot(grads, a, m * k), m, n, k, alpha);
                kernels::matmul_at_acc(g, val(a), slot(grads, b, n * k), m, n, k, alpha);
            }
            &Op::Add(a, b) => {
                add_into(slot(grads, a, r * c), g, T::one());
                add_into(slot(grads, b, r * c), g, T::one());
            }
            &Op::Sub(a, b) => {
                add_into(slot(grads, a, r * c), g, T::one());
                add_into(slot(grads, b, r * c), g, -T::one());
            }
            &Op::Mul(a, b) => {
                let (va, vb) = (val(a), val(b));
                let ga = slot(grads, a, r * c);
                for i in 0..r * c {
                    ga[i] += g[i] * vb[i];
                }
                let gb = slot(grads, b, r * c);
                for i in 0..r * c {
                    gb[i] += g[i] * va[i];
                }
            }
            &Op::AddRow(a, row) => {
                add_into(slot(grads, a, r * c), g, T::one());
                let gr = slot(grads, row, c);
                for chunk in g.chunks_exact(c) {
                    add_into(gr, chunk, T::one());
                }
            }
            &Op::Scale(a, s) => add_into(slot(grads, a, r * c), g, s),
            &Op::Sigmoid(a) => {
                let ga = slot(grads, a, r * c);
                for i in 0..r * c {
                    ga[i] += g[i] * y[i] * (T::one() - y[i]);
                }
            }
            &Op::Silu(a) => {
                let x = val(a);
                let ga = slot(grads, a, r * c);
                for i in 0..r * c {
                    let s = sigmoid(x[i]);
                    ga[i] += g[i] * s * (T::one() + x[i] * (T::one() - s));
                }
            }
            &Op::Tanh(a) => {
                let ga = slot(grads, a, r * c);
                for i in 0..r * c {
                    ga[i] += g[i] * (T::one() - y[i] * y[i]);
                }
            }
            &Op::Softmax(a) => {
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let s = kernels::dot(yr, gr);
                    for j in 0..c {
                        ga[i * c + j] += yr[j] * (gr[j] - s);
                    }
                }
            }
            &Op::LogSoftmax(a) => {
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let s: T = gr.iter().copied().sum();
                    for j in 0..c {
                        if yr[j] != T::neg_infinity() {
                            ga[i * c + j] += gr[j] - yr[j].exp() * s;
                        }
                    }
                }
            }
            &Op::Sparsemax(a) => {
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let (mut sum, mut cnt) = (T::zero(), 0usize);
                    for j in 0..c {
                        if yr[j] > T::zero() {
                            sum += gr[j];
                            cnt += 1;
                        }
                    }
                    let mean = sum / T::cast(cnt.max(1) as f64);
                    for j in 0..c {
                        if yr[j] > T::zero() {
                            ga[i * c + j] += gr[j] - mean;
                        }
                    }
                }
            }
            &Op::Entmax15(a) => {
                let ga = slot(grads, a, r * c);
                for i in 0..r {
                    let (yr, gr) = (&y[i * c..(i + 1) * c], &g[i * c..(i + 1) * c]);
                    let sq: Vec<T> = yr.iter().map(|p| p.sqrt()).collect();
                    let num = kernels::dot(&sq, gr);
                    let den: T = sq.iter().copied().sum();
                    let q = num / den;
                    for j in 0..c {
                        ga[i * c + j] += sq[j] * (gr[j] - q);
                    }
                }
            }
            &Op::TopKMask(a) => {
                let ga = slot(grads, a, r * c);
                for i in 0..r * c {
                    if y[i] != T::neg_infinity() {
                        ga[i] += g[i];
                    }
                }
            }
            Op::TopKZero(a, keep) | Op::MaskFill(a, keep) => {
                let ga = slot(grads, *a, r * c);
                for i in 0..r * c {
                    if keep[i] {
                        ga[i] += g[i];
                    }
                }
            }
            Op::RmsNorm { x, gain, inv_rms } => {
                let (xv, gv) = (val(*x), val(*gain));
                let cf = T::cast(c as f64);
                {
                    let gx = slot(grads, *x, r * c);
                    for i in 0..r {
                        let inv = inv_rms[i];
                        let xr = &xv[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let mut s = T::zero();
                        for j in 0..c {
                            s += gr[j] * gv[j] * xr[j];
                        }
                        let k = inv * inv * inv * s / cf;
                        for j in 0..c {
                            gx[i * c + j] += inv * gv[j] * gr[j] - xr[j] * k;
                        }
                    }
                }
                let gg = slot(grads, *gain, c);
                for i in 0..r {
                    for j in 0..c {
                        gg[j] += g[i * c + j] * xv[i * c + j] * inv_rms[i];
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                inv_std,
                xhat,
            } => {
                let gv = val(*gain);
                let cf = T::cast(c as f64);
                {
                    let gx = slot(grads, *x, r * c);
                    for i in 0..r {
                        let hr = &xhat[i * c..(i + 1) * c];
                        let gr = &g[i * c..(i + 1) * c];
                        let dh: Vec<T> = (0..c).map(|j| gr[j] * gv[j]).collect();
                        let s1: T = dh.iter().copied().sum();
                        let s2 = kernels::dot(&dh, hr);
                        for j in 0..c {
                            gx[i * c + j] += inv_std[i] / cf * (cf * dh[j] - s1 - hr[j] * s2);
                        }
                    }
                }
                {
                    let gg = slot(grads, *gain, c);
                    for i in 0..r * c {
                        gg[i % c] += g[i] * xhat[i];
                    }
                }
                let gb = slot(grads, *bias, c);
                for i in 0..r * c {
                    gb[i % c] += g[i];
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = self.nodes[p.idx].value.len();
                    add_into(slot(grads, p, len), &g[off..off + len], T::one());
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let w = self.nodes[p.idx].cols;
                    let gp = slot(grads, p, r * w);
                    for i in 0..r {
                        add_into(&mut gp[i * w..(i + 1) * w], &g[i * c + col..i * c + col + w], T::one());
                    }
                    col += w;
                }
            }
            &Op::SliceRows(a, start) => {
                let (ar, ac) = dims(a);
                let ga = slot(grads, a, ar * ac);
                add_into(&mut ga[start * ac..(start + r) * ac], g, T::one());
            }
            &Op::SliceCols(a, start) => {
                let (ar, ac) = dims(a);
                let ga = slot(grads, a, ar * ac);
                for i in 0..r {
                    add_into(&mut ga[i * ac + start..i * ac + start + c], &g[i * c..(i + 1) * c], T::one());
                }
            }
            Op::GatherRows(a, rows) => {
                let (ar, ac) = dims(*a);
                let ga = slot(grads, *a, ar * ac);
                for (i, &src) in rows.iter().enumerate() {
                    add_into(&mut ga[src * ac..(src + 1) * ac], &g[i * c..(i + 1) * c], T::one());
                }
            }
            Op::Pick(a, cols) => {
                let (ar, ac) = dims(*a);
                let ga = slot(grads, *a, ar * ac);
                for (i, &j) in cols.iter().enumerate() {
                    ga[i * ac + j] += g[i];
                }
            }
            &Op::Sum(a) => {
                let len = self.nodes[a.idx].value.len();
                let ga = slot(grads, a, len);
                for v in ga.iter_mut() {
                    *v += g[0];
                }
            }
            Op::WeightedSum(a, w) => {
                let ga = slot(grads, *a, w.len());
                add_into(ga, w, g[0]);
            }
        }
    }
}

fn slot<T: Real>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
    grads[v.idx].get_or_insert_with(|| vec![T::zero(); len])
}

fn add_into<T: Real>(dst: &mut [T], src: &[T], alpha: T) {
    kernels::axpy(alpha, src, dst);
}
