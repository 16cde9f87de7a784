//! Dynamically recorded reverse-mode tape.
//!
//! Every forward op appends a node holding its value and enough saved state to
//! run its vector-Jacobian product. Nodes whose inputs never require a gradient
//! are marked as such and are skipped by [`Graph::backward`].

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use super::kernels::{self, ConvGeom};
use super::{NumericsError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Variance floor used by [`Graph::layer_norm`].
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul { a: Var, b: Var, ta: bool, tb: bool, m: usize, k: usize, n: usize },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    AddCol(Var, Var),
    Transpose(Var),
    Reshape(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows { a: Var, start: usize },
    SliceCols { a: Var, start: usize },
    GatherRows { a: Var, rows: Vec<usize> },
    Softmax(Var),
    LayerNorm { a: Var, inv_std: Vec<f64> },
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    LogClamp { a: Var, floor: f64 },
    Conv2d { x: Var, w: Var, geom: ConvGeom, cols: Vec<f64> },
    ConvT2d { x: Var, w: Var, geom: ConvGeom },
    Upsample { a: Var, c: usize, h: usize, w: usize, f: usize },
    MeanRows(Var),
    MeanCols(Var),
    Sum(Var),
    CrossEntropy { logits: Var, probs: Vec<f64>, targets: Vec<usize>, weights: Vec<f64>, smoothing: f64 },
    Reparam { mu: Var, logvar: Var, eps: Vec<f64> },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients {
    nodes: Vec<Option<Vec<f64>>>,
    params: BTreeMap<String, Tensor>,
}

impl Gradients {
    /// Gradient of the loss w.r.t. a node, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.nodes.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients keyed by parameter name, for parameters registered with a gradient.
    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    pub fn into_params(self) -> BTreeMap<String, Tensor> {
        self.params
    }
}

/// The tape itself.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
    check_finite: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

fn mismatch(op: &'static str, a: &[usize], b: &[usize]) -> NumericsError {
    NumericsError::ShapeMismatch { op, lhs: a.to_vec(), rhs: b.to_vec() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn add_into(dst: &mut Option<Vec<f64>>, src: &[f64]) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(src) {
                *a += *b;
            }
        }
        None => *dst = Some(src.to_vec()),
    }
}

fn add_into_owned(dst: &mut Option<Vec<f64>>, src: Vec<f64>) {
    match dst {
        Some(d) => {
            for (a, b) in d.iter_mut().zip(&src) {
                *a += *b;
            }
        }
        None => *dst = Some(src),
    }
}

impl Graph {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new(), check_finite: cfg!(debug_assertions) }
    }

    /// Enable or disable the NaN/Inf check performed after every forward op.
    pub fn set_check_finite(&mut self, on: bool) {
        self.check_finite = on;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op_name: &'static str, value: Tensor, op: Op, requires_grad: bool) -> Result<Var, NumericsError> {
        if self.check_finite && !value.is_finite() {
            return Err(NumericsError::NonFinite(op_name.to_string()));
        }
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn make(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::new(shape, data).expect("op produced consistent shape")
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// A leaf whose gradient is tracked.
    pub fn variable(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Register a named parameter leaf. Repeated calls with the same name return
    /// the same node so gradients accumulate in one place.
    pub fn param(&mut self, name: &str, t: &Tensor, requires_grad: bool) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = if requires_grad { self.variable(t.clone()) } else { self.constant(t.clone()) };
        self.params.insert(name.to_string(), v);
        v
    }

    /// Copy of a value cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.nodes[v.0].value.clone();
        self.constant(t)
    }

    // ---- linear algebra -------------------------------------------------

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_t(a, false, b, false)
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.matmul_t(a, false, b, true)
    }

    /// `op(a) · op(b)` where `op` optionally transposes the stored 2-D matrix.
    pub fn matmul_t(&mut self, a: Var, ta: bool, b: Var, tb: bool) -> Result<Var, NumericsError> {
        let (ar, ac) = self.value(a).dims2();
        let (br, bc) = self.value(b).dims2();
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(mismatch("matmul", self.shape(a), self.shape(b)));
        }
        let out = kernels::matmul(m, k, n, self.value(a).data(), ta, self.value(b).data(), tb);
        let rg = self.rg(a) || self.rg(b);
        self.push("matmul", Self::make(&[m, n], out), Op::MatMul { a, b, ta, tb, m, k, n }, rg)
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, NumericsError> {
        let t = self.value(a).transposed();
        let rg = self.rg(a);
        self.push("transpose", t, Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NumericsError> {
        let t = self.value(a).clone().reshaped(shape)?;
        let rg = self.rg(a);
        self.push("reshape", t, Op::Reshape(a), rg)
    }

    // ---- elementwise ----------------------------------------------------

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), NumericsError> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(op, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn binary(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        self.same_shape(name, a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| f(*x, *y)).collect();
        let t = Self::make(self.shape(a), data);
        let rg = self.rg(a) || self.rg(b);
        self.push(name, t, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumericsError> {
        self.binary("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var, NumericsError> {
        let data = self.value(a).data().iter().map(|x| f(*x)).collect();
        let t = Self::make(self.shape(a), data);
        let rg = self.rg(a);
        self.push(name, t, op, rg)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.unary("scale", a, |x| x * s, Op::Scale(a, s))
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var, NumericsError> {
        self.unary("add_scalar", a, |x| x + s, Op::AddScalar(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("relu", a, |x| if x > 0.0 { x } else { 0.0 }, Op::Relu(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("tanh", a, libm::tanh, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.unary("exp", a, libm::exp, Op::Exp(a))
    }

    /// `ln(max(a, floor))`; the gradient is zero where the floor is active.
    pub fn log_clamped(&mut self, a: Var, floor: f64) -> Result<Var, NumericsError> {
        self.unary("log_clamped", a, |x| libm::log(if x > floor { x } else { floor }), Op::LogClamp { a, floor })
    }

    /// Add a length-`n` vector to every row of an `m×n` matrix.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        if self.value(row).numel() != n {
            return Err(mismatch("add_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] += r[j];
            }
        }
        let t = Self::make(self.shape(a), data);
        let rg = self.rg(a) || self.rg(row);
        self.push("add_row", t, Op::AddRow(a, row), rg)
    }

    /// Multiply every row of an `m×n` matrix elementwise by a length-`n` vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        if self.value(row).numel() != n {
            return Err(mismatch("mul_row", self.shape(a), self.shape(row)));
        }
        let r = self.value(row).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for j in 0..n {
                data[i * n + j] *= r[j];
            }
        }
        let t = Self::make(self.shape(a), data);
        let rg = self.rg(a) || self.rg(row);
        self.push("mul_row", t, Op::MulRow(a, row), rg)
    }

    /// Add a length-`m` vector to every column of an `m×n` matrix (per-channel bias).
    pub fn add_col(&mut self, a: Var, col: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        if self.value(col).numel() != m {
            return Err(mismatch("add_col", self.shape(a), self.shape(col)));
        }
        let c = self.value(col).data();
        let mut data = self.value(a).data().to_vec();
        for i in 0..m {
            for v in &mut data[i * n..(i + 1) * n] {
                *v += c[i];
            }
        }
        let t = Self::make(self.shape(a), data);
        let rg = self.rg(a) || self.rg(col);
        self.push("add_col", t, Op::AddCol(a, col), rg)
    }

    // ---- structural -----------------------------------------------------

    /// Stack along the leading axis; trailing dims must agree.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat_rows"))?;
        let tail = self.shape(first)[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for &p in parts {
            let s = self.shape(p);
            if s.len() != tail.len() + 1 || s[1..] != tail[..] {
                return Err(mismatch("concat_rows", self.shape(first), s));
            }
            lead += s[0];
            data.extend_from_slice(self.value(p).data());
        }
        let mut shape = vec![lead];
        shape.extend_from_slice(&tail);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_rows", Self::make(&shape, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    /// Concatenate 2-D matrices side by side.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NumericsError> {
        let first = *parts.first().ok_or(NumericsError::Empty("concat_cols"))?;
        let (m, _) = self.value(first).dims2();
        let mut total = 0;
        for &p in parts {
            let (pm, pn) = self.value(p).dims2();
            if pm != m {
                return Err(mismatch("concat_cols", self.shape(first), self.shape(p)));
            }
            total += pn;
        }
        let mut data = vec![0.0; m * total];
        let mut off = 0;
        for &p in parts {
            let (_, pn) = self.value(p).dims2();
            let src = self.value(p).data();
            for i in 0..m {
                data[i * total + off..i * total + off + pn].copy_from_slice(&src[i * pn..(i + 1) * pn]);
            }
            off += pn;
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push("concat_cols", Self::make(&[m, total], data), Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        if len == 0 || start + len > m {
            return Err(mismatch("slice_rows", self.shape(a), &[start, len]));
        }
        let data = self.value(a).data()[start * n..(start + len) * n].to_vec();
        let rg = self.rg(a);
        self.push("slice_rows", Self::make(&[len, n], data), Op::SliceRows { a, start }, rg)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        if len == 0 || start + len > n {
            return Err(mismatch("slice_cols", self.shape(a), &[start, len]));
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(m * len);
        for i in 0..m {
            data.extend_from_slice(&src[i * n + start..i * n + start + len]);
        }
        let rg = self.rg(a);
        self.push("slice_cols", Self::make(&[m, len], data), Op::SliceCols { a, start }, rg)
    }

    /// Select rows by index (embedding lookup when `a` is a table).
    pub fn gather_rows(&mut self, a: Var, rows: &[usize]) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        if rows.is_empty() {
            return Err(NumericsError::Empty("gather_rows"));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= m) {
            return Err(NumericsError::IndexOutOfRange { op: "gather_rows", index: bad, len: m });
        }
        let src = self.value(a).data();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            data.extend_from_slice(&src[r * n..(r + 1) * n]);
        }
        let rg = self.rg(a);
        self.push("gather_rows", Self::make(&[rows.len(), n], data), Op::GatherRows { a, rows: rows.to_vec() }, rg)
    }

    pub fn embedding_lookup(&mut self, table: Var, ids: &[usize]) -> Result<Var, NumericsError> {
        self.gather_rows(table, ids)
    }

    // ---- normalisation and probabilities ---------------------------------

    /// Row-wise softmax over the last axis. `keep`, when given, has one flag per
    /// element; masked entries get probability exactly zero.
    pub fn softmax_masked(&mut self, a: Var, keep: Option<&[bool]>) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        if let Some(k) = keep {
            if k.len() != m * n {
                return Err(mismatch("softmax", self.shape(a), &[k.len()]));
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let kept = |j: usize| keep.is_none_or(|k| k[i * n + j]);
            let mut max = f64::NEG_INFINITY;
            for (j, &v) in row.iter().enumerate() {
                if kept(j) && v > max {
                    max = v;
                }
            }
            if max == f64::NEG_INFINITY {
                return Err(NumericsError::AllMasked("softmax"));
            }
            let dst = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0;
            for j in 0..n {
                if kept(j) {
                    let e = libm::exp(row[j] - max);
                    dst[j] = e;
                    sum += e;
                }
            }
            for v in dst.iter_mut() {
                *v /= sum;
            }
        }
        let t = Self::make(self.shape(a), out);
        let rg = self.rg(a);
        self.push("softmax", t, Op::Softmax(a), rg)
    }

    pub fn softmax(&mut self, a: Var) -> Result<Var, NumericsError> {
        self.softmax_masked(a, None)
    }

    /// Softmax of a 2-D matrix along `axis` (0 = down columns, 1 = along rows).
    pub fn softmax_axis(&mut self, a: Var, axis: usize) -> Result<Var, NumericsError> {
        match axis {
            1 => self.softmax(a),
            0 => {
                let t = self.transpose(a)?;
                let s = self.softmax(t)?;
                self.transpose(s)
            }
            _ => Err(mismatch("softmax", self.shape(a), &[axis])),
        }
    }

    /// Normalise each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        let x = self.value(a).data();
        let mut out = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mean = row.iter().sum::<f64>() / n as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            let is = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
            inv_std[i] = is;
            for j in 0..n {
                out[i * n + j] = (row[j] - mean) * is;
            }
        }
        let t = Self::make(self.shape(a), out);
        let rg = self.rg(a);
        self.push("layer_norm", t, Op::LayerNorm { a, inv_std }, rg)
    }

    // ---- convolution -----------------------------------------------------

    fn image_dims(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize), NumericsError> {
        match *self.shape(x) {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(mismatch(op, self.shape(x), &[0, 0, 0])),
        }
    }

    /// `x: [cin, h, w]`, `w: [cout, cin, k, k]`.
    pub fn conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, NumericsError> {
        let (cin, h, wd) = self.image_dims("conv2d", x)?;
        let [cout, wcin, k, k2] = *self.shape(w) else {
            return Err(mismatch("conv2d", self.shape(x), self.shape(w)));
        };
        if wcin != cin || k != k2 {
            return Err(mismatch("conv2d", self.shape(x), self.shape(w)));
        }
        let geom = ConvGeom { channels: cin, height: h, width: wd, kernel: k, stride, pad };
        let (ho, wo) = geom.out_hw().ok_or_else(|| mismatch("conv2d", self.shape(x), self.shape(w)))?;
        let cols = kernels::im2col(self.value(x).data(), &geom);
        let out = kernels::matmul(cout, cin * k * k, ho * wo, self.value(w).data(), false, &cols, false);
        let rg = self.rg(x) || self.rg(w);
        self.push("conv2d", Self::make(&[cout, ho, wo], out), Op::Conv2d { x, w, geom, cols }, rg)
    }

    /// Transposed convolution. `x: [cin, h, w]`, `w: [cin, cout, k, k]`;
    /// output side is `(h - 1)·stride - 2·pad + k`.
    pub fn transpose_conv2d(&mut self, x: Var, w: Var, stride: usize, pad: usize) -> Result<Var, NumericsError> {
        let (cin, h, wd) = self.image_dims("transpose_conv2d", x)?;
        let [wcin, cout, k, k2] = *self.shape(w) else {
            return Err(mismatch("transpose_conv2d", self.shape(x), self.shape(w)));
        };
        if wcin != cin || k != k2 || stride == 0 {
            return Err(mismatch("transpose_conv2d", self.shape(x), self.shape(w)));
        }
        let big_h = ((h - 1) * stride + k).checked_sub(2 * pad);
        let big_w = ((wd - 1) * stride + k).checked_sub(2 * pad);
        let (Some(ho), Some(wo)) = (big_h, big_w) else {
            return Err(mismatch("transpose_conv2d", self.shape(x), self.shape(w)));
        };
        let geom = ConvGeom { channels: cout, height: ho, width: wo, kernel: k, stride, pad };
        if geom.out_hw() != Some((h, wd)) {
            return Err(mismatch("transpose_conv2d", self.shape(x), self.shape(w)));
        }
        // cols[(cout·k·k) × (h·w)] = wᵀ · x
        let cols = kernels::matmul(cout * k * k, cin, h * wd, self.value(w).data(), true, self.value(x).data(), false);
        let out = kernels::col2im(&cols, &geom);
        let rg = self.rg(x) || self.rg(w);
        self.push("transpose_conv2d", Self::make(&[cout, ho, wo], out), Op::ConvT2d { x, w, geom }, rg)
    }

    pub fn nearest_upsample(&mut self, a: Var, factor: usize) -> Result<Var, NumericsError> {
        let (c, h, w) = self.image_dims("nearest_upsample", a)?;
        if factor == 0 {
            return Err(mismatch("nearest_upsample", self.shape(a), &[factor]));
        }
        let out = kernels::upsample_nearest(self.value(a).data(), c, h, w, factor);
        let rg = self.rg(a);
        self.push("nearest_upsample", Self::make(&[c, h * factor, w * factor], out), Op::Upsample { a, c, h, w, f: factor }, rg)
    }

    // ---- reductions ------------------------------------------------------

    /// Mean over the leading axis: `m×n → 1×n`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        let x = self.value(a).data();
        let mut out = vec![0.0; n];
        for i in 0..m {
            for j in 0..n {
                out[j] += x[i * n + j];
            }
        }
        for v in &mut out {
            *v /= m as f64;
        }
        let rg = self.rg(a);
        self.push("mean_pool", Self::make(&[1, n], out), Op::MeanRows(a), rg)
    }

    /// Mean over the trailing axes: `m×n → m×1`.
    pub fn mean_cols(&mut self, a: Var) -> Result<Var, NumericsError> {
        let (m, n) = self.value(a).dims2();
        let x = self.value(a).data();
        let out = (0..m).map(|i| x[i * n..(i + 1) * n].iter().sum::<f64>() / n as f64).collect();
        let rg = self.rg(a);
        self.push("mean_pool", Self::make(&[m, 1], out), Op::MeanCols(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Result<Var, NumericsError> {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push("sum", Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Summed cross-entropy of row-wise logits against target ids.
    ///
    /// Each row `t` contributes `weights[t] · (−Σ_v q_tv ln p_tv)` where `q` is
    /// the one-hot target mixed with `smoothing` uniform mass.
    pub fn cross_entropy_with_logits(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: &[f64],
        smoothing: f64,
    ) -> Result<Var, NumericsError> {
        let (t_len, v) = self.value(logits).dims2();
        if targets.len() != t_len || weights.len() != t_len {
            return Err(mismatch("cross_entropy_with_logits", self.shape(logits), &[targets.len()]));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(NumericsError::IndexOutOfRange { op: "cross_entropy_with_logits", index: bad, len: v });
        }
        let x = self.value(logits).data();
        let mut probs = vec![0.0; t_len * v];
        let mut loss = 0.0;
        for t in 0..t_len {
            let row = &x[t * v..(t + 1) * v];
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|z| libm::exp(z - max)).sum();
            let log_z = max + libm::log(sum);
            let p = &mut probs[t * v..(t + 1) * v];
            let mut row_loss = 0.0;
            for j in 0..v {
                let logp = row[j] - log_z;
                p[j] = libm::exp(logp);
                let q = smoothing / v as f64 + if j == targets[t] { 1.0 - smoothing } else { 0.0 };
                if q != 0.0 {
                    row_loss -= q * logp;
                }
            }
            loss += weights[t] * row_loss;
        }
        let rg = self.rg(logits);
        let op = Op::CrossEntropy {
            logits,
            probs,
            targets: targets.to_vec(),
            weights: weights.to_vec(),
            smoothing,
        };
        self.push("cross_entropy_with_logits", Tensor::scalar(loss), op, rg)
    }

    /// `mu + exp(logvar / 2) ⊙ eps` with `eps` held fixed.
    pub fn reparameterize(&mut self, mu: Var, logvar: Var, eps: &[f64]) -> Result<Var, NumericsError> {
        self.same_shape("reparameterize", mu, logvar)?;
        if eps.len() != self.value(mu).numel() {
            return Err(mismatch("reparameterize", self.shape(mu), &[eps.len()]));
        }
        let data = self
            .value(mu)
            .data()
            .iter()
            .zip(self.value(logvar).data())
            .zip(eps)
            .map(|((m, lv), e)| m + libm::exp(0.5 * lv) * e)
            .collect();
        let t = Self::make(self.shape(mu), data);
        let rg = self.rg(mu) || self.rg(logvar);
        self.push("reparameterize", t, Op::Reparam { mu, logvar, eps: eps.to_vec() }, rg)
    }

    // ---- backward --------------------------------------------------------

    /// Reverse sweep from a scalar output.
    pub fn backward(&self, out: Var) -> Result<Gradients, NumericsError> {
        if self.value(out).numel() != 1 {
            return Err(NumericsError::NonScalar(self.shape(out).to_vec()));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(vec![1.0]);
        for idx in (0..=out.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(dy) = grads[idx].take() else { continue };
            self.propagate(node, &dy, &mut grads);
            grads[idx] = Some(dy);
        }
        let params = self
            .params
            .iter()
            .filter(|(_, v)| self.rg(**v))
            .map(|(name, v)| {
                let g = grads[v.0].clone().unwrap_or_else(|| vec![0.0; self.value(*v).numel()]);
                (name.clone(), Self::make(self.shape(*v), g))
            })
            .collect();
        Ok(Gradients { nodes: grads, params })
    }

    fn propagate(&self, node: &Node, dy: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb, m, k, n } => {
                let (m, k, n) = (*m, *k, *n);
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    let da = if !*ta {
                        kernels::matmul(m, n, k, dy, false, bv, !*tb)
                    } else {
                        kernels::matmul(k, n, m, bv, *tb, dy, true)
                    };
                    add_into_owned(&mut grads[a.0], da);
                }
                if self.rg(*b) {
                    let db = if !*tb {
                        kernels::matmul(k, m, n, av, !*ta, dy, false)
                    } else {
                        kernels::matmul(n, m, k, dy, true, av, *ta)
                    };
                    add_into_owned(&mut grads[b.0], db);
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    add_into(&mut grads[a.0], dy);
                }
                if self.rg(*b) {
                    add_into(&mut grads[b.0], dy);
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    add_into(&mut grads[a.0], dy);
                }
                if self.rg(*b) {
                    add_into_owned(&mut grads[b.0], dy.iter().map(|g| -g).collect());
                }
            }
            Op::Mul(a, b) => {
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                if self.rg(*a) {
                    add_into_owned(&mut grads[a.0], dy.iter().zip(bv).map(|(g, x)| g * x).collect());
                }
                if self.rg(*b) {
                    add_into_owned(&mut grads[b.0], dy.iter().zip(av).map(|(g, x)| g * x).collect());
                }
            }
            Op::Scale(a, s) => add_into_owned(&mut grads[a.0], dy.iter().map(|g| g * s).collect()),
            Op::AddScalar(a) | Op::Reshape(a) => add_into(&mut grads[a.0], dy),
            Op::AddRow(a, r) => {
                if self.rg(*a) {
                    add_into(&mut grads[a.0], dy);
                }
                if self.rg(*r) {
                    let n = self.value(*r).numel();
                    let mut dr = vec![0.0; n];
                    for (i, g) in dy.iter().enumerate() {
                        dr[i % n] += g;
                    }
                    add_into_owned(&mut grads[r.0], dr);
                }
            }
            Op::MulRow(a, r) => {
                let n = self.value(*r).numel();
                let rv = self.value(*r).data();
                if self.rg(*a) {
                    add_into_owned(&mut grads[a.0], dy.iter().enumerate().map(|(i, g)| g * rv[i % n]).collect());
                }
                if self.rg(*r) {
                    let av = self.value(*a).data();
                    let mut dr = vec![0.0; n];
                    for (i, g) in dy.iter().enumerate() {
                        dr[i % n] += g * av[i];
                    }
                    add_into_owned(&mut grads[r.0], dr);
                }
            }
            Op::AddCol(a, c) => {
                if self.rg(*a) {
                    add_into(&mut grads[a.0], dy);
                }
                if self.rg(*c) {
                    let m = self.value(*c).numel();
                    let n = dy.len() / m;
                    let dc = (0..m).map(|i| dy[i * n..(i + 1) * n].iter().sum()).collect();
                    add_into_owned(&mut grads[c.0], dc);
                }
            }
            Op::Transpose(a) => {
                let (m, n) = node.value.dims2();
                let t = Self::make(&[m, n], dy.to_vec()).transposed();
                add_into_owned(&mut grads[a.0], t.into_data());
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    if self.rg(*p) {
                        add_into(&mut grads[p.0], &dy[off..off + len]);
                    }
                    off += len;
                }
            }
            Op::ConcatCols(parts) => {
                let (m, total) = node.value.dims2();
                let mut off = 0;
                for p in parts {
                    let (_, pn) = self.value(*p).dims2();
                    if self.rg(*p) {
                        let mut dp = Vec::with_capacity(m * pn);
                        for i in 0..m {
                            dp.extend_from_slice(&dy[i * total + off..i * total + off + pn]);
                        }
                        add_into_owned(&mut grads[p.0], dp);
                    }
                    off += pn;
                }
            }
            Op::SliceRows { a, start } => {
                let src = self.value(*a);
                let (_, n) = src.dims2();
                let mut da = vec![0.0; src.numel()];
                da[start * n..start * n + dy.len()].copy_from_slice(dy);
                add_into_owned(&mut grads[a.0], da);
            }
            Op::SliceCols { a, start } => {
                let src = self.value(*a);
                let (m, n) = src.dims2();
                let len = dy.len() / m;
                let mut da = vec![0.0; src.numel()];
                for i in 0..m {
                    da[i * n + start..i * n + start + len].copy_from_slice(&dy[i * len..(i + 1) * len]);
                }
                add_into_owned(&mut grads[a.0], da);
            }
            Op::GatherRows { a, rows } => {
                let src = self.value(*a);
                let (_, n) = src.dims2();
                let mut da = vec![0.0; src.numel()];
                for (i, &r) in rows.iter().enumerate() {
                    for j in 0..n {
                        da[r * n + j] += dy[i * n + j];
                    }
                }
                add_into_owned(&mut grads[a.0], da);
            }
            Op::Softmax(a) => {
                let (m, n) = node.value.dims2();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &dy[i * n..(i + 1) * n];
                    let dot: f64 = yr.iter().zip(gr).map(|(p, g)| p * g).sum();
                    for j in 0..n {
                        da[i * n + j] = yr[j] * (gr[j] - dot);
                    }
                }
                add_into_owned(&mut grads[a.0], da);
            }
            Op::LayerNorm { a, inv_std } => {
                let (m, n) = node.value.dims2();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    let yr = &y[i * n..(i + 1) * n];
                    let gr = &dy[i * n..(i + 1) * n];
                    let mean_g = gr.iter().sum::<f64>() / n as f64;
                    let mean_gy = gr.iter().zip(yr).map(|(g, v)| g * v).sum::<f64>() / n as f64;
                    for j in 0..n {
                        da[i * n + j] = inv_std[i] * (gr[j] - mean_g - yr[j] * mean_gy);
                    }
                }
                add_into_owned(&mut grads[a.0], da);
            }
            Op::Relu(a) => {
                add_into_owned(&mut grads[a.0], dy.iter().zip(y).map(|(g, v)| if *v > 0.0 { *g } else { 0.0 }).collect());
            }
            Op::Tanh(a) => {
                add_into_owned(&mut grads[a.0], dy.iter().zip(y).map(|(g, v)| g * (1.0 - v * v)).collect());
            }
            Op::Sigmoid(a) => {
                add_into_owned(&mut grads[a.0], dy.iter().zip(y).map(|(g, v)| g * v * (1.0 - v)).collect());
            }
            Op::Exp(a) => {
                add_into_owned(&mut grads[a.0], dy.iter().zip(y).map(|(g, v)| g * v).collect());
            }
            Op::LogClamp { a, floor } => {
                let x = self.value(*a).data();
                add_into_owned(
                    &mut grads[a.0],
                    dy.iter().zip(x).map(|(g, v)| if *v > *floor { g / v } else { 0.0 }).collect(),
                );
            }
            Op::Conv2d { x, w, geom, cols } => {
                let (ho, wo) = geom.out_hw().expect("validated geometry");
                let cout = self.shape(*w)[0];
                let kk = geom.channels * geom.kernel * geom.kernel;
                if self.rg(*w) {
                    let dw = kernels::matmul(cout, ho * wo, kk, dy, false, cols, true);
                    add_into_owned(&mut grads[w.0], dw);
                }
                if self.rg(*x) {
                    let dcols = kernels::matmul(kk, cout, ho * wo, self.value(*w).data(), true, dy, false);
                    add_into_owned(&mut grads[x.0], kernels::col2im(&dcols, geom));
                }
            }
            Op::ConvT2d { x, w, geom } => {
                let (h, wd) = geom.out_hw().expect("validated geometry");
                let cin = self.shape(*x)[0];
                let ckk = geom.channels * geom.kernel * geom.kernel;
                let dcols = kernels::im2col(dy, geom);
                if self.rg(*x) {
                    let dx = kernels::matmul(cin, ckk, h * wd, self.value(*w).data(), false, &dcols, false);
                    add_into_owned(&mut grads[x.0], dx);
                }
                if self.rg(*w) {
                    let dw = kernels::matmul(cin, h * wd, ckk, self.value(*x).data(), false, &dcols, true);
                    add_into_owned(&mut grads[w.0], dw);
                }
            }
            Op::Upsample { a, c, h, w, f } => {
                add_into_owned(&mut grads[a.0], kernels::downsample_sum(dy, *c, *h, *w, *f));
            }
            Op::MeanRows(a) => {
                let (m, n) = self.value(*a).dims2();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = dy[j] / m as f64;
                    }
                }
                add_into_owned(&mut grads[a.0], da);
            }
            Op::MeanCols(a) => {
                let (m, n) = self.value(*a).dims2();
                let mut da = vec![0.0; m * n];
                for i in 0..m {
                    for j in 0..n {
                        da[i * n + j] = dy[i] / n as f64;
                    }
                }
                add_into_owned(&mut grads[a.0], da);
            }
            Op::Sum(a) => {
                let n = self.value(*a).numel();
                add_into_owned(&mut grads[a.0], vec![dy[0]; n]);
            }
            Op::CrossEntropy { logits, probs, targets, weights, smoothing } => {
                let (t_len, v) = self.value(*logits).dims2();
                let mut dl = vec![0.0; t_len * v];
                for t in 0..t_len {
                    let w = weights[t] * dy[0];
                    if w == 0.0 {
                        continue;
                    }
                    for j in 0..v {
                        let q = smoothing / v as f64 + if j == targets[t] { 1.0 - smoothing } else { 0.0 };
                        dl[t * v + j] = w * (probs[t * v + j] - q);
                    }
                }
                add_into_owned(&mut grads[logits.0], dl);
            }
            Op::Reparam { mu, logvar, eps } => {
                if self.rg(*mu) {
                    add_into(&mut grads[mu.0], dy);
                }
                if self.rg(*logvar) {
                    let lv = self.value(*logvar).data();
                    let d = dy.iter().zip(lv).zip(eps).map(|((g, l), e)| g * 0.5 * libm::exp(0.5 * l) * e).collect();
                    add_into_owned(&mut grads[logvar.0], d);
                }
            }
        }
    }
}
