//! Dense `f64` tensors and a define-by-run reverse-mode tape.
//!
//! A [`Graph`] is rebuilt for every forward pass. Leaves are registered with
//! [`Graph::param`] (gradient tracked) or [`Graph::constant`]; every operation
//! appends a node holding its value and the handles of its inputs. Calling
//! [`Graph::backward`] on a scalar node zeroes all gradient buffers and then
//! accumulates `d loss / d leaf` into every tracked leaf.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
///
/// `shape == []` denotes a scalar holding exactly one element.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim("tensor", &shape, &[data.len()]));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: Vec::new(),
            data: vec![value],
        }
    }

    /// One-dimensional tensor.
    pub fn vector(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1 && self.shape.iter().all(|&d| d == 1)
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> f64 {
        self.data[0]
    }

    /// Rows of the tensor viewed as a matrix: a 1-D tensor is one row.
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[0],
        }
    }

    /// Row width of the tensor viewed as a matrix.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 => 1,
            1 => self.shape[0],
            _ => self.shape[1..].iter().product(),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    /// Copies the selected rows into a new `[indices.len() x cols]` tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Result<Tensor> {
        let c = self.cols();
        let mut data = Vec::with_capacity(indices.len() * c);
        for &i in indices {
            if i >= self.rows() {
                return Err(Error::Index {
                    op: "gather_rows",
                    index: i,
                    bound: self.rows(),
                });
            }
            data.extend_from_slice(self.row(i));
        }
        Tensor::matrix(indices.len(), c, data)
    }

    fn same_shape(&self, other: &Tensor, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(op, &self.shape, &other.shape));
        }
        Ok(())
    }
}

/// `c = beta * c + op(a) * op(b)` with `op(a)` of size `m x k` and `op(b)`
/// of size `k x n`. A transposed operand is read from its row-major storage.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        c.iter_mut().for_each(|v| *v *= beta);
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m) } else { (k, 1) };
    let (rsb, csb) = if b_transposed { (1, k) } else { (n, 1) };
    // SAFETY: the strides above address exactly the m*k, k*n and m*n
    // elements asserted on entry, and `c` does not alias `a` or `b`.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// `x W + b` for `m` rows of `x`; `w` is `fan_in x b.len()` row-major.
pub(crate) fn affine(x: &[f64], m: usize, w: &[f64], b: &[f64]) -> Vec<f64> {
    let fan_out = b.len();
    let fan_in = w.len() / fan_out.max(1);
    let mut out = Vec::with_capacity(m * fan_out);
    for _ in 0..m {
        out.extend_from_slice(b);
    }
    gemm(m, fan_in, fan_out, x, false, w, false, 1.0, &mut out);
    out
}

/// Row-wise log-softmax using max subtraction.
pub(crate) fn log_softmax_rows(x: &[f64], cols: usize, out: &mut [f64]) {
    for (xr, yr) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let max = xr.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = xr.iter().map(|&v| libm::exp(v - max)).sum();
        let lse = max + libm::log(sum);
        for (y, &v) in yr.iter_mut().zip(xr) {
            *y = v - lse;
        }
    }
}

/// Cosine dissimilarity `1 - cos(a, b)`; zero-norm inputs count as orthogonal.
pub fn cosine_dissimilarity(a: &[f64], b: &[f64]) -> f64 {
    let (dot, na, nb) = dot_norms(a, b);
    if na == 0.0 || nb == 0.0 {
        return 1.0;
    }
    1.0 - dot / (na * nb)
}

fn dot_norms(a: &[f64], b: &[f64]) -> (f64, f64, f64) {
    let mut dot = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for (&x, &y) in a.iter().zip(b) {
        dot += x * y;
        aa += x * x;
        bb += y * y;
    }
    (dot, libm::sqrt(aa), libm::sqrt(bb))
}

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    LogSoftmax(Var),
    Softmax(Var),
    Sum(Var),
    Mean(Var),
    Dot(Var, Var),
    Norm(Var),
    Linear {
        x: Var,
        params: Var,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    },
    Nll {
        logp: Var,
        targets: Vec<usize>,
    },
    CosineRows(Var, Var),
    Scalar {
        x: Var,
        grad: Tensor,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation tape.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Tensor>>,
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    /// Registers a leaf whose gradient is tracked.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Registers a leaf excluded from differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient accumulated by the last [`Graph::backward`] call.
    pub fn grad(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Matrix product of `[m x k]` and `[k x n]` operands.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape.len() != 2 || tb.shape.len() != 2 || ta.shape[1] != tb.shape[0] {
            return Err(Error::dim("matmul", &ta.shape, &tb.shape));
        }
        let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, &ta.data, false, &tb.data, false, 0.0, &mut out);
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    /// Adds a length-`n` bias to every row of an `[m x n]` operand.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(b));
        if tx.shape.len() != 2 || tb.shape.len() != 1 || tx.shape[1] != tb.shape[0] {
            return Err(Error::dim("add_bias", &tx.shape, &tb.shape));
        }
        let n = tb.shape[0];
        let mut out = tx.data.clone();
        for row in out.chunks_mut(n) {
            for (o, &bv) in row.iter_mut().zip(&tb.data) {
                *o += bv;
            }
        }
        let shape = tx.shape.clone();
        let rg = self.tracked(&[x, b]);
        Ok(self.push(Tensor::new(shape, out)?, Op::AddBias(x, b), rg))
    }

    fn elementwise(
        &mut self,
        a: Var,
        b: Var,
        name: &'static str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, name)?;
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape.clone();
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor { shape, data }, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.elementwise(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let t = self.value(a);
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| v * s).collect(),
        };
        let rg = self.tracked(&[a]);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let value = Tensor {
            shape: t.shape.clone(),
            data: t.data.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect(),
        };
        let rg = self.tracked(&[a]);
        self.push(value, Op::Relu(a), rg)
    }

    /// Row-wise log-softmax of a 1-D or 2-D operand.
    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape.is_empty() || t.shape.len() > 2 {
            return Err(Error::dim("log_softmax", &t.shape, &[]));
        }
        let mut out = vec![0.0; t.len()];
        log_softmax_rows(&t.data, t.cols(), &mut out);
        let shape = t.shape.clone();
        let rg = self.tracked(&[a]);
        Ok(self.push(Tensor { shape, data: out }, Op::LogSoftmax(a), rg))
    }

    /// Row-wise softmax of a 1-D or 2-D operand.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        if t.shape.is_empty() || t.shape.len() > 2 {
            return Err(Error::dim("softmax", &t.shape, &[]));
        }
        let mut out = vec![0.0; t.len()];
        log_softmax_rows(&t.data, t.cols(), &mut out);
        out.iter_mut().for_each(|v| *v = libm::exp(*v));
        let shape = t.shape.clone();
        let rg = self.tracked(&[a]);
        Ok(self.push(Tensor { shape, data: out }, Op::Softmax(a), rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data.iter().sum();
        let rg = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        let rg = self.tracked(&[a]);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(Error::dim("dot", &ta.shape, &tb.shape));
        }
        let s = ta.data.iter().zip(&tb.data).map(|(x, y)| x * y).sum();
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor::scalar(s), Op::Dot(a, b), rg))
    }

    /// Euclidean norm of all elements.
    pub fn norm(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).data.iter().map(|v| v * v).sum();
        let rg = self.tracked(&[a]);
        self.push(Tensor::scalar(libm::sqrt(s)), Op::Norm(a), rg)
    }

    /// Affine map `x W + b` whose weight (`fan_in x fan_out`, row-major)
    /// and bias (`fan_out`) are stored contiguously in the flat vector
    /// `params` starting at `offset`.
    pub fn linear(
        &mut self,
        x: Var,
        params: Var,
        offset: usize,
        fan_in: usize,
        fan_out: usize,
    ) -> Result<Var> {
        let (tx, tp) = (self.value(x), self.value(params));
        if tx.shape.len() != 2 || tx.shape[1] != fan_in {
            return Err(Error::dim("linear", &tx.shape, &[fan_in, fan_out]));
        }
        let end = offset + fan_in * fan_out + fan_out;
        if end > tp.len() {
            return Err(Error::dim("linear", &tp.shape, &[end]));
        }
        let m = tx.shape[0];
        let w = &tp.data[offset..offset + fan_in * fan_out];
        let b = &tp.data[offset + fan_in * fan_out..end];
        let out = affine(&tx.data, m, w, b);
        let rg = self.tracked(&[x, params]);
        let op = Op::Linear {
            x,
            params,
            offset,
            fan_in,
            fan_out,
        };
        Ok(self.push(Tensor::matrix(m, fan_out, out)?, op, rg))
    }

    /// Mean negative log-likelihood of the target column of each row of
    /// a `[B x C]` log-probability operand.
    pub fn nll(&mut self, logp: Var, targets: &[usize]) -> Result<Var> {
        let t = self.value(logp);
        let (rows, cols) = (t.rows(), t.cols());
        if t.shape.len() != 2 || rows != targets.len() || rows == 0 {
            return Err(Error::dim("nll", &t.shape, &[targets.len()]));
        }
        let mut s = 0.0;
        for (i, &y) in targets.iter().enumerate() {
            if y >= cols {
                return Err(Error::Index {
                    op: "nll",
                    index: y,
                    bound: cols,
                });
            }
            s -= t.data[i * cols + y];
        }
        let rg = self.tracked(&[logp]);
        let op = Op::Nll {
            logp,
            targets: targets.to_vec(),
        };
        Ok(self.push(Tensor::scalar(s / rows as f64), op, rg))
    }

    /// Mean cross-entropy between softmax(logits) and class-index targets.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let cols = self.value(logits).cols();
        if let Some(&bad) = targets.iter().find(|&&y| y >= cols) {
            return Err(Error::Index {
                op: "cross_entropy",
                index: bad,
                bound: cols,
            });
        }
        let logp = self.log_softmax(logits)?;
        self.nll(logp, targets)
    }

    /// Per-row cosine dissimilarity `1 - cos(a_i, b_i)`, shape `[B]`.
    /// A row with zero norm on either side yields distance 1 and no gradient.
    pub fn cosine_distance_rows(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        ta.same_shape(tb, "cosine_distance_rows")?;
        let cols = ta.cols();
        let out: Vec<f64> = ta
            .data
            .chunks(cols)
            .zip(tb.data.chunks(cols))
            .map(|(x, y)| cosine_dissimilarity(x, y))
            .collect();
        let rg = self.tracked(&[a, b]);
        Ok(self.push(Tensor::vector(out), Op::CosineRows(a, b), rg))
    }

    /// Scalar function of `x` whose value and gradient the caller computed.
    pub fn scalar_fn(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        self.value(x).same_shape(&grad, "scalar_fn")?;
        let rg = self.tracked(&[x]);
        Ok(self.push(Tensor::scalar(value), Op::Scalar { x, grad }, rg))
    }

    /// Reverse pass from a scalar root.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract("backward requires a scalar root"));
        }
        let nodes = &self.nodes;
        let grads = &mut self.grads;
        grads.clear();
        grads.resize_with(nodes.len(), || None);
        grads[loss.0] = Some(Tensor {
            shape: nodes[loss.0].value.shape.clone(),
            data: vec![1.0],
        });

        for i in (0..=loss.0).rev() {
            let node = &nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else { continue };
            backprop_node(nodes, grads, node, &gy);
        }

        for (i, node) in nodes.iter().enumerate() {
            if matches!(node.op, Op::Leaf) && node.requires_grad {
                if grads[i].is_none() {
                    grads[i] = Some(Tensor::zeros(&node.value.shape));
                }
            } else {
                grads[i] = None;
            }
        }
        Ok(())
    }
}

/// Zero-initialized gradient buffer of `v`, or `None` when `v` is untracked.
fn slot<'g>(nodes: &[Node], grads: &'g mut [Option<Tensor>], v: Var) -> Option<&'g mut [f64]> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    let g = grads[v.0].get_or_insert_with(|| Tensor::zeros(&nodes[v.0].value.shape));
    Some(&mut g.data)
}

fn backprop_node(nodes: &[Node], grads: &mut [Option<Tensor>], node: &Node, gy: &Tensor) {
    let gy = &gy.data;
    let val = |v: Var| &nodes[v.0].value;
    match node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let (m, k, n) = (ta.shape[0], ta.shape[1], tb.shape[1]);
            if let Some(ga) = slot(nodes, grads, a) {
                gemm(m, n, k, gy, false, &tb.data, true, 1.0, ga);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                gemm(k, m, n, &ta.data, true, gy, false, 1.0, gb);
            }
        }
        Op::AddBias(x, b) => {
            if let Some(gx) = slot(nodes, grads, x) {
                axpy(gx, gy, 1.0);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                let n = gb.len();
                for row in gy.chunks(n) {
                    axpy(gb, row, 1.0);
                }
            }
        }
        Op::Add(a, b) => {
            if let Some(ga) = slot(nodes, grads, a) {
                axpy(ga, gy, 1.0);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                axpy(gb, gy, 1.0);
            }
        }
        Op::Sub(a, b) => {
            if let Some(ga) = slot(nodes, grads, a) {
                axpy(ga, gy, 1.0);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                axpy(gb, gy, -1.0);
            }
        }
        Op::Mul(a, b) => {
            let (ta, tb) = (val(a), val(b));
            if let Some(ga) = slot(nodes, grads, a) {
                for ((g, &d), &y) in ga.iter_mut().zip(gy).zip(&tb.data) {
                    *g += d * y;
                }
            }
            if let Some(gb) = slot(nodes, grads, b) {
                for ((g, &d), &x) in gb.iter_mut().zip(gy).zip(&ta.data) {
                    *g += d * x;
                }
            }
        }
        Op::Scale(a, s) => {
            if let Some(ga) = slot(nodes, grads, a) {
                axpy(ga, gy, s);
            }
        }
        Op::Relu(a) => {
            let ta = val(a);
            if let Some(ga) = slot(nodes, grads, a) {
                for ((g, &d), &x) in ga.iter_mut().zip(gy).zip(&ta.data) {
                    if x > 0.0 {
                        *g += d;
                    }
                }
            }
        }
        Op::LogSoftmax(a) => {
            let cols = node.value.cols();
            if let Some(ga) = slot(nodes, grads, a) {
                for ((g, d), y) in ga
                    .chunks_mut(cols)
                    .zip(gy.chunks(cols))
                    .zip(node.value.data.chunks(cols))
                {
                    let total: f64 = d.iter().sum();
                    for j in 0..cols {
                        g[j] += d[j] - libm::exp(y[j]) * total;
                    }
                }
            }
        }
        Op::Softmax(a) => {
            let cols = node.value.cols();
            if let Some(ga) = slot(nodes, grads, a) {
                for ((g, d), s) in ga
                    .chunks_mut(cols)
                    .zip(gy.chunks(cols))
                    .zip(node.value.data.chunks(cols))
                {
                    let inner: f64 = d.iter().zip(s).map(|(x, y)| x * y).sum();
                    for j in 0..cols {
                        g[j] += s[j] * (d[j] - inner);
                    }
                }
            }
        }
        Op::Sum(a) => {
            if let Some(ga) = slot(nodes, grads, a) {
                ga.iter_mut().for_each(|g| *g += gy[0]);
            }
        }
        Op::Mean(a) => {
            if let Some(ga) = slot(nodes, grads, a) {
                let d = gy[0] / ga.len() as f64;
                ga.iter_mut().for_each(|g| *g += d);
            }
        }
        Op::Dot(a, b) => {
            let (ta, tb) = (val(a), val(b));
            if let Some(ga) = slot(nodes, grads, a) {
                axpy(ga, &tb.data, gy[0]);
            }
            if let Some(gb) = slot(nodes, grads, b) {
                axpy(gb, &ta.data, gy[0]);
            }
        }
        Op::Norm(a) => {
            let n = node.value.data[0];
            let ta = val(a);
            if let Some(ga) = slot(nodes, grads, a) {
                if n > 0.0 {
                    axpy(ga, &ta.data, gy[0] / n);
                }
            }
        }
        Op::Linear {
            x,
            params,
            offset,
            fan_in,
            fan_out,
        } => {
            let tx = val(x);
            let m = tx.shape[0];
            let wlen = fan_in * fan_out;
            if let Some(gx) = slot(nodes, grads, x) {
                let w = &val(params).data[offset..offset + wlen];
                gemm(m, fan_out, fan_in, gy, false, w, true, 1.0, gx);
            }
            if let Some(gp) = slot(nodes, grads, params) {
                let (gw, rest) = gp[offset..].split_at_mut(wlen);
                gemm(fan_in, m, fan_out, &tx.data, true, gy, false, 1.0, gw);
                let gb = &mut rest[..fan_out];
                for row in gy.chunks(fan_out) {
                    axpy(gb, row, 1.0);
                }
            }
        }
        Op::Nll { logp, ref targets } => {
            if let Some(gl) = slot(nodes, grads, logp) {
                let cols = val(logp).cols();
                let d = -gy[0] / targets.len() as f64;
                for (i, &y) in targets.iter().enumerate() {
                    gl[i * cols + y] += d;
                }
            }
        }
        Op::Scalar { x, ref grad } => {
            if let Some(gx) = slot(nodes, grads, x) {
                axpy(gx, &grad.data, gy[0]);
            }
        }
        Op::CosineRows(a, b) => {
            let (ta, tb) = (val(a), val(b));
            let cols = ta.cols();
            let rows = ta.rows();
            for r in 0..rows {
                let x = &ta.data[r * cols..(r + 1) * cols];
                let y = &tb.data[r * cols..(r + 1) * cols];
                let (dot, nx, ny) = dot_norms(x, y);
                if nx == 0.0 || ny == 0.0 {
                    continue;
                }
                let c = dot / (nx * ny);
                let d = gy[r];
                // d(1 - cos)/dx = -(y / (|x||y|) - cos * x / |x|^2)
                if let Some(ga) = slot(nodes, grads, a) {
                    let g = &mut ga[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        g[j] -= d * (y[j] / (nx * ny) - c * x[j] / (nx * nx));
                    }
                }
                if let Some(gb) = slot(nodes, grads, b) {
                    let g = &mut gb[r * cols..(r + 1) * cols];
                    for j in 0..cols {
                        g[j] -= d * (x[j] / (nx * ny) - c * y[j] / (ny * ny));
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], src: &[f64], alpha: f64) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}
