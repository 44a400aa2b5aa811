//! Reverse-mode automatic differentiation over dense tensors.
//!
//! A [`Graph`] is the computation record for one forward pass. Leaves are
//! registered with [`Graph::param`] (differentiable) or [`Graph::constant`];
//! every primitive appends one node whose inputs precede it, so node order is
//! already a topological order. [`Graph::backward`] walks the record in
//! reverse and returns the gradient of a scalar root with respect to every
//! differentiable leaf.
//!
//! Parameter leaves borrow their tensors for the lifetime of the graph, which
//! keeps large weight matrices from being copied on every training step. The
//! graph is meant to be built, differentiated once, and dropped.

use alloc::borrow::Cow;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gemm::{gemm, MatRef};
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn pixels(&self) -> usize {
        self.n * self.h * self.w
    }
}

enum Op {
    Leaf,
    MatMul { a: Var, b: Var, b_transposed: bool },
    Add { a: Var, b: Var, broadcast: bool },
    Sub { a: Var, b: Var, broadcast: bool },
    Mul { a: Var, b: Var },
    Scale { a: Var, k: f64 },
    Sigmoid(Var),
    Tanh(Var),
    Exp(Var),
    Relu(Var),
    LeakyRelu { a: Var, slope: f64 },
    SoftmaxRows(Var),
    ConcatCols(Vec<Var>),
    MeanAll(Var),
    SumAll(Var),
    Conv2d { input: Var, kernel: Var, bias: Option<Var>, cols: Vec<f64>, geom: ConvGeom },
    Reshape(Var),
    SliceRows { a: Var, start: usize },
}

struct Node<'a> {
    value: Cow<'a, Tensor>,
    op: Op,
    requires_grad: bool,
}

/// Computation record for a single forward/backward pass.
#[derive(Default)]
pub struct Graph<'a> {
    nodes: Vec<Node<'a>>,
}

/// Gradients of a scalar root, indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for a differentiable leaf. Leaves the root does not reach
    /// carry an all-zero tensor; constants and interior nodes return `None`.
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor> {
        self.grads.get_mut(var.0).and_then(Option::take)
    }
}

fn check_finite(op: &'static str, t: &Tensor) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite { op })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch { op, lhs: a.shape().to_vec(), rhs: b.shape().to_vec() }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

impl<'a> Graph<'a> {
    pub fn new() -> Self {
        Graph { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    pub fn requires_grad(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Differentiable leaf borrowing `t`.
    pub fn param(&mut self, t: &'a Tensor) -> Result<Var> {
        self.leaf(Cow::Borrowed(t), true)
    }

    /// Differentiable leaf owning `t`.
    pub fn param_owned(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(Cow::Owned(t), true)
    }

    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(Cow::Owned(t), false)
    }

    pub fn constant_ref(&mut self, t: &'a Tensor) -> Result<Var> {
        self.leaf(Cow::Borrowed(t), false)
    }

    /// Leaf that is differentiable iff `trainable`.
    pub fn leaf_ref(&mut self, t: &'a Tensor, trainable: bool) -> Result<Var> {
        self.leaf(Cow::Borrowed(t), trainable)
    }

    fn leaf(&mut self, value: Cow<'a, Tensor>, requires_grad: bool) -> Result<Var> {
        check_finite("leaf", &value)?;
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[Var]) -> Result<Var> {
        check_finite(name, &value)?;
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value: Cow::Owned(value), op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(f64) -> f64, op: Op) -> Result<Var> {
        let x = self.value(a);
        let data = x.data().iter().map(|&v| f(v)).collect();
        let out = Tensor::new(x.shape(), data)?;
        self.push(name, out, op, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, false)
    }

    /// `a · bᵀ` without materializing the transpose.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_impl(a, b, true)
    }

    fn matmul_impl(&mut self, a: Var, b: Var, b_transposed: bool) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ndim() != 2 || y.ndim() != 2 {
            return Err(mismatch("matmul", x, y));
        }
        let (m, k) = (x.shape()[0], x.shape()[1]);
        let (yr, yc) = (y.shape()[0], y.shape()[1]);
        let (k2, n) = if b_transposed { (yc, yr) } else { (yr, yc) };
        if k != k2 {
            return Err(mismatch("matmul", x, y));
        }
        let mut out = vec![0.0; m * n];
        let bview = if b_transposed {
            MatRef::new(y.data(), yr, yc).t()
        } else {
            MatRef::new(y.data(), yr, yc)
        };
        gemm(1.0, MatRef::new(x.data(), m, k), bview, 0.0, &mut out);
        let out = Tensor::new(&[m, n], out)?;
        self.push("matmul", out, Op::MatMul { a, b, b_transposed }, &[a, b])
    }

    fn broadcast_kind(&self, name: &'static str, a: Var, b: Var) -> Result<bool> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() == y.shape() {
            Ok(false)
        } else if x.ndim() >= 2 && y.rows() == 1 && y.len() == x.cols() {
            Ok(true)
        } else {
            Err(mismatch(name, x, y))
        }
    }

    fn combine(&self, a: Var, b: Var, broadcast: bool, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        let data = if broadcast {
            let c = x.cols();
            x.data().iter().enumerate().map(|(i, &v)| f(v, y.data()[i % c])).collect()
        } else {
            x.data().iter().zip(y.data()).map(|(&u, &v)| f(u, v)).collect()
        };
        Tensor::new(x.shape(), data)
    }

    /// Elementwise sum; `b` may also be a row vector added to every row of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_kind("add", a, b)?;
        let out = self.combine(a, b, broadcast, |u, v| u + v)?;
        self.push("add", out, Op::Add { a, b, broadcast }, &[a, b])
    }

    /// Elementwise difference; `b` may be a row vector as in [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let broadcast = self.broadcast_kind("sub", a, b)?;
        let out = self.combine(a, b, broadcast, |u, v| u - v)?;
        self.push("sub", out, Op::Sub { a, b, broadcast }, &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(mismatch("elementwise_mul", self.value(a), self.value(b)));
        }
        let out = self.combine(a, b, false, |u, v| u * v)?;
        self.push("elementwise_mul", out, Op::Mul { a, b }, &[a, b])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Result<Var> {
        if !k.is_finite() {
            return Err(Error::NonFinite { op: "scalar_mul" });
        }
        self.unary("scalar_mul", a, |v| k * v, Op::Scale { a, k })
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.unary("sigmoid", a, sigmoid, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.unary("tanh", a, libm::tanh, Op::Tanh(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, libm::exp, Op::Exp(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |v| if v > 0.0 { v } else { 0.0 }, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Result<Var> {
        self.unary("leaky_relu", a, |v| if v > 0.0 { v } else { slope * v }, Op::LeakyRelu { a, slope })
    }

    /// Row-wise softmax of a 2-D tensor, computed with max subtraction.
    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.ndim() != 2 {
            return Err(Error::ShapeMismatch {
                op: "softmax_rows",
                lhs: x.shape().to_vec(),
                rhs: vec![],
            });
        }
        let cols = x.cols();
        let mut data = Vec::with_capacity(x.len());
        for row in x.data().chunks(cols) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = data.len();
            let mut total = 0.0;
            for &v in row {
                let e = libm::exp(v - max);
                total += e;
                data.push(e);
            }
            for v in &mut data[start..] {
                *v /= total;
            }
        }
        let out = Tensor::new(x.shape(), data)?;
        self.push("softmax_rows", out, Op::SoftmaxRows(a), &[a])
    }

    /// Column-wise concatenation of 2-D tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat_cols of nothing".into()))?;
        let rows = self.value(*first).rows();
        for p in parts {
            let t = self.value(*p);
            if t.ndim() != 2 || t.rows() != rows {
                return Err(mismatch("concat_cols", self.value(*first), t));
            }
        }
        let total: usize = parts.iter().map(|p| self.value(*p).cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                data.extend_from_slice(self.value(*p).row(r));
            }
        }
        let out = Tensor::new(&[rows, total], data)?;
        self.push("concat_cols", out, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn mean_all(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::InvalidArgument("mean_all of an empty tensor".into()));
        }
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push("mean_all", Tensor::scalar(m), Op::MeanAll(a), &[a])
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum::<f64>();
        self.push("sum_all", Tensor::scalar(s), Op::SumAll(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    /// Rows `start..start + len` along the first axis.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let x = self.value(a);
        let first = x.shape().first().copied().unwrap_or(1);
        if len == 0 || start + len > first {
            return Err(Error::ShapeMismatch {
                op: "slice",
                lhs: x.shape().to_vec(),
                rhs: vec![start, len],
            });
        }
        let stride = x.len() / first;
        let mut shape = x.shape().to_vec();
        shape[0] = len;
        let data = x.data()[start * stride..(start + len) * stride].to_vec();
        let out = Tensor::new(&shape, data)?;
        self.push("slice", out, Op::SliceRows { a, start }, &[a])
    }

    /// Stride-1 "same" convolution (zero padding of half the kernel size).
    ///
    /// `input` is `(channels, height, width)` or batched
    /// `(batch, channels, height, width)`; `kernel` is
    /// `(out_channels, channels, kh, kw)` with odd `kh`, `kw`; `bias`, when
    /// given, holds one value per output channel.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Option<Var>) -> Result<Var> {
        let (x, k) = (self.value(input), self.value(kernel));
        let batched = x.ndim() == 4;
        let (n, c, h, w) = match *x.shape() {
            [c, h, w] => (1, c, h, w),
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(mismatch("conv2d", x, k)),
        };
        let (o, kc, kh, kw) = match *k.shape() {
            [o, kc, kh, kw] => (o, kc, kh, kw),
            _ => return Err(mismatch("conv2d", x, k)),
        };
        if kc != c || kh % 2 == 0 || kw % 2 == 0 {
            return Err(mismatch("conv2d", x, k));
        }
        if let Some(b) = bias {
            if self.value(b).len() != o {
                return Err(mismatch("conv2d", k, self.value(b)));
            }
        }
        let geom = ConvGeom { n, c, h, w, o, kh, kw };
        let cols = im2col(x.data(), &geom);
        let mut mat = vec![0.0; geom.pixels() * o];
        gemm(
            1.0,
            MatRef::new(&cols, geom.pixels(), geom.patch()),
            MatRef::new(k.data(), o, geom.patch()).t(),
            0.0,
            &mut mat,
        );
        let bias_vals = bias.map(|b| self.value(b).data());
        let mut out = vec![0.0; n * o * h * w];
        for b in 0..n {
            for ch in 0..o {
                let off = bias_vals.map_or(0.0, |v| v[ch]);
                for p in 0..h * w {
                    out[(b * o + ch) * h * w + p] = mat[(b * h * w + p) * o + ch] + off;
                }
            }
        }
        let shape: Vec<usize> = if batched { vec![n, o, h, w] } else { vec![o, h, w] };
        let out = Tensor::new(&shape, out)?;
        let mut inputs = vec![input, kernel];
        inputs.extend(bias);
        let keep_cols = self.nodes[kernel.0].requires_grad;
        let op = Op::Conv2d {
            input,
            kernel,
            bias,
            cols: if keep_cols { cols } else { Vec::new() },
            geom,
        };
        self.push("conv2d", out, op, &inputs)
    }

    /// Gradients of the scalar `root` with respect to every differentiable leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients> {
        let rv = self.value(root);
        if rv.len() != 1 {
            return Err(Error::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if self.nodes[root.0].requires_grad {
            grads[root.0] = Some(Tensor::full(rv.shape(), 1.0));
        }
        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(idx, &g, &mut grads);
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if node.requires_grad && matches!(node.op, Op::Leaf) && grads[idx].is_none() {
                grads[idx] = Some(Tensor::zeros(node.value.shape()));
            }
            if !matches!(node.op, Op::Leaf) || !node.requires_grad {
                grads[idx] = None;
            }
        }
        Ok(Gradients { grads })
    }

    fn accum<'g>(&self, grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let slot = &mut grads[v.0];
        if slot.is_none() {
            *slot = Some(Tensor::zeros(self.nodes[v.0].value.shape()));
        }
        slot.as_mut().map(Tensor::data_mut)
    }

    fn propagate(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let out = &self.nodes[idx].value;
        let gd = g.data();
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul { a, b, b_transposed } => {
                let (x, y) = (self.value(*a), self.value(*b));
                let (m, k) = (x.shape()[0], x.shape()[1]);
                let (yr, yc) = (y.shape()[0], y.shape()[1]);
                let n = out.shape()[1];
                let gm = MatRef::new(gd, m, n);
                if let Some(da) = self.accum(grads, *a) {
                    let yv = MatRef::new(y.data(), yr, yc);
                    // dA = dC · Bᵀ, or dC · B when b is stored transposed.
                    let bt = if *b_transposed { yv } else { yv.t() };
                    gemm(1.0, gm, bt, 1.0, da);
                }
                if let Some(db) = self.accum(grads, *b) {
                    let xv = MatRef::new(x.data(), m, k);
                    if *b_transposed {
                        gemm(1.0, gm.t(), xv, 1.0, db);
                    } else {
                        gemm(1.0, xv.t(), gm, 1.0, db);
                    }
                }
            }
            Op::Add { a, b, broadcast } | Op::Sub { a, b, broadcast } => {
                let sign = if matches!(self.nodes[idx].op, Op::Sub { .. }) { -1.0 } else { 1.0 };
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().zip(gd).for_each(|(d, v)| *d += v);
                }
                if let Some(db) = self.accum(grads, *b) {
                    if *broadcast {
                        let c = db.len();
                        for (i, v) in gd.iter().enumerate() {
                            db[i % c] += sign * v;
                        }
                    } else {
                        db.iter_mut().zip(gd).for_each(|(d, v)| *d += sign * v);
                    }
                }
            }
            Op::Mul { a, b } => {
                let (x, y) = (self.value(*a), self.value(*b));
                if let Some(da) = self.accum(grads, *a) {
                    for ((d, v), w) in da.iter_mut().zip(gd).zip(y.data()) {
                        *d += v * w;
                    }
                }
                if let Some(db) = self.accum(grads, *b) {
                    for ((d, v), w) in db.iter_mut().zip(gd).zip(x.data()) {
                        *d += v * w;
                    }
                }
            }
            Op::Scale { a, k } => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().zip(gd).for_each(|(d, v)| *d += k * v);
                }
            }
            Op::Sigmoid(a) => self.pointwise(grads, *a, gd, |_, y| y * (1.0 - y), out),
            Op::Tanh(a) => self.pointwise(grads, *a, gd, |_, y| 1.0 - y * y, out),
            Op::Exp(a) => self.pointwise(grads, *a, gd, |_, y| y, out),
            Op::Relu(a) => self.pointwise(grads, *a, gd, |x, _| if x > 0.0 { 1.0 } else { 0.0 }, out),
            Op::LeakyRelu { a, slope } => {
                let s = *slope;
                self.pointwise(grads, *a, gd, |x, _| if x > 0.0 { 1.0 } else { s }, out)
            }
            Op::SoftmaxRows(a) => {
                if let Some(da) = self.accum(grads, *a) {
                    let cols = out.cols();
                    for ((drow, grow), yrow) in
                        da.chunks_mut(cols).zip(gd.chunks(cols)).zip(out.data().chunks(cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(g, y)| g * y).sum();
                        for ((d, g), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (g - dot);
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for p in parts {
                    let c = self.value(*p).cols();
                    if let Some(dp) = self.accum(grads, *p) {
                        for (r, drow) in dp.chunks_mut(c).enumerate() {
                            let src = &gd[r * total + offset..r * total + offset + c];
                            drow.iter_mut().zip(src).for_each(|(d, v)| *d += v);
                        }
                    }
                    offset += c;
                }
            }
            Op::MeanAll(a) => {
                if let Some(da) = self.accum(grads, *a) {
                    let s = gd[0] / da.len() as f64;
                    da.iter_mut().for_each(|d| *d += s);
                }
            }
            Op::SumAll(a) => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().for_each(|d| *d += gd[0]);
                }
            }
            Op::Reshape(a) => {
                if let Some(da) = self.accum(grads, *a) {
                    da.iter_mut().zip(gd).for_each(|(d, v)| *d += v);
                }
            }
            Op::SliceRows { a, start } => {
                if let Some(da) = self.accum(grads, *a) {
                    let offset = start * gd.len() / out.shape()[0];
                    da[offset..offset + gd.len()].iter_mut().zip(gd).for_each(|(d, v)| *d += v);
                }
            }
            Op::Conv2d { input, kernel, bias, cols, geom } => {
                let gm = geom;
                let hw = gm.h * gm.w;
                // Gradient laid out as (pixels × out_channels) to match im2col rows.
                let mut gmat = vec![0.0; gm.pixels() * gm.o];
                for b in 0..gm.n {
                    for ch in 0..gm.o {
                        for p in 0..hw {
                            gmat[(b * hw + p) * gm.o + ch] = gd[(b * gm.o + ch) * hw + p];
                        }
                    }
                }
                let gview = MatRef::new(&gmat, gm.pixels(), gm.o);
                if let Some(bias) = bias {
                    if let Some(db) = self.accum(grads, *bias) {
                        for row in gmat.chunks(gm.o) {
                            db.iter_mut().zip(row).for_each(|(d, v)| *d += v);
                        }
                    }
                }
                if let Some(dk) = self.accum(grads, *kernel) {
                    gemm(1.0, gview.t(), MatRef::new(cols, gm.pixels(), gm.patch()), 1.0, dk);
                }
                if self.nodes[input.0].requires_grad {
                    let k = self.value(*kernel);
                    let mut dcols = vec![0.0; gm.pixels() * gm.patch()];
                    gemm(1.0, gview, MatRef::new(k.data(), gm.o, gm.patch()), 0.0, &mut dcols);
                    if let Some(dx) = self.accum(grads, *input) {
                        col2im_add(&dcols, gm, dx);
                    }
                }
            }
        }
    }

    fn pointwise(
        &self,
        grads: &mut [Option<Tensor>],
        a: Var,
        gd: &[f64],
        local: impl Fn(f64, f64) -> f64,
        out: &Tensor,
    ) {
        let x = self.value(a);
        if let Some(da) = self.accum(grads, a) {
            for (((d, g), xv), yv) in da.iter_mut().zip(gd).zip(x.data()).zip(out.data()) {
                *d += g * local(*xv, *yv);
            }
        }
    }
}

fn im2col(x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let patch = g.patch();
    let mut cols = vec![0.0; g.pixels() * patch];
    for b in 0..g.n {
        for y in 0..g.h {
            for xx in 0..g.w {
                let row = &mut cols[((b * g.h + y) * g.w + xx) * patch..][..patch];
                for c in 0..g.c {
                    for ky in 0..g.kh {
                        let sy = y as isize + ky as isize - ph;
                        if sy < 0 || sy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let sx = xx as isize + kx as isize - pw;
                            if sx < 0 || sx >= g.w as isize {
                                continue;
                            }
                            row[(c * g.kh + ky) * g.kw + kx] =
                                x[((b * g.c + c) * g.h + sy as usize) * g.w + sx as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_add(cols: &[f64], g: &ConvGeom, dx: &mut [f64]) {
    let (ph, pw) = ((g.kh / 2) as isize, (g.kw / 2) as isize);
    let patch = g.patch();
    for b in 0..g.n {
        for y in 0..g.h {
            for xx in 0..g.w {
                let row = &cols[((b * g.h + y) * g.w + xx) * patch..][..patch];
                for c in 0..g.c {
                    for ky in 0..g.kh {
                        let sy = y as isize + ky as isize - ph;
                        if sy < 0 || sy >= g.h as isize {
                            continue;
                        }
                        for kx in 0..g.kw {
                            let sx = xx as isize + kx as isize - pw;
                            if sx < 0 || sx >= g.w as isize {
                                continue;
                            }
                            dx[((b * g.c + c) * g.h + sy as usize) * g.w + sx as usize] +=
                                row[(c * g.kh + ky) * g.kw + kx];
                        }
                    }
                }
            }
        }
    }
}

/// Maximum relative error between reverse-mode and central-difference
/// gradients of `f` over every coordinate of every tensor in `params`.
///
/// `f` builds a scalar from one leaf per parameter tensor, in order. The
/// relative error of a coordinate is `|a − n| / max(1e−8, |a| + |n|)`.
pub fn grad_check<F>(f: F, params: &[Tensor], epsilon: f64) -> Result<f64>
where
    F: for<'g> Fn(&mut Graph<'g>, &[Var]) -> Result<Var>,
{
    let analytic: Vec<Tensor> = {
        let mut g = Graph::new();
        let vars = params.iter().map(|p| g.param(p)).collect::<Result<Vec<_>>>()?;
        let root = f(&mut g, &vars)?;
        let mut grads = g.backward(root)?;
        vars.iter()
            .zip(params)
            .map(|(v, p)| grads.take(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect()
    };
    let eval = |ps: &[Tensor]| -> Result<f64> {
        let mut g = Graph::new();
        let vars = ps.iter().map(|p| g.constant_ref(p)).collect::<Result<Vec<_>>>()?;
        let root = f(&mut g, &vars)?;
        let v = g.value(root);
        if v.len() != 1 {
            return Err(Error::NonScalarRoot(v.shape().to_vec()));
        }
        Ok(v.item())
    };
    let mut work: Vec<Tensor> = params.to_vec();
    let mut worst: f64 = 0.0;
    for (pi, grad) in analytic.iter().enumerate() {
        for ci in 0..params[pi].len() {
            let orig = params[pi].data()[ci];
            work[pi].data_mut()[ci] = orig + epsilon;
            let plus = eval(&work)?;
            work[pi].data_mut()[ci] = orig - epsilon;
            let minus = eval(&work)?;
            work[pi].data_mut()[ci] = orig;
            let numeric = (plus - minus) / (2.0 * epsilon);
            let a = grad.data()[ci];
            let err = (a - numeric).abs() / f64::max(1e-8, a.abs() + numeric.abs());
            if !err.is_finite() {
                return Err(Error::NonFinite { op: "grad_check" });
            }
            worst = worst.max(err);
        }
    }
    Ok(worst)
}
