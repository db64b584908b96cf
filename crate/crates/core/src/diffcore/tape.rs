//! Reverse-mode tape over a fixed set of matrix operations.
//!
//! Every operation stores its output value. Nodes whose operands do not
//! require gradients are kept as constants and skipped by `backward`.

use std::sync::Arc;

use crate::diffcore::tensor::gemm;
use crate::diffcore::{ParamStore, SparseMatrix, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    SpMM(Arc<SparseMatrix>, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Log(Var),
    Sqrt(Var),
    Sigmoid(Var),
    Relu(Var),
    Softplus(Var),
    Clamp(Var, f64, f64),
    Sum(Var),
    SumRows(Var),
    SumCols(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SelectRows(Var, Vec<usize>),
    Gather(Var, Vec<usize>),
    PairwiseSqDist(Var, Var),
    LogSumExpRows(Var),
    LogSumExpCols(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradients produced by [`Graph::gradients`], indexed by variable.
#[derive(Debug)]
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn dims(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    if t.is_matrix() {
        Ok((t.rows(), t.cols()))
    } else {
        Err(Error::shape(op, format!("expected rank-2 operand, got {:?}", t.shape())))
    }
}

fn broadcast_dim(a: usize, b: usize) -> Option<usize> {
    if a == b {
        Some(a)
    } else if a == 1 {
        Some(b)
    } else if b == 1 {
        Some(a)
    } else {
        None
    }
}

fn zip_broadcast(a: &Tensor, b: &Tensor, rows: usize, cols: usize, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape() == b.shape() {
        let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
        return Tensor::matrix(rows, cols, data).expect("same shape");
    }
    let mut out = Vec::with_capacity(rows * cols);
    for i in 0..rows {
        let ra = a.row_slice(if a.rows() == 1 { 0 } else { i });
        let rb = b.row_slice(if b.rows() == 1 { 0 } else { i });
        match (ra.len() == cols, rb.len() == cols) {
            (true, true) => out.extend(ra.iter().zip(rb).map(|(&x, &y)| f(x, y))),
            (true, false) => out.extend(ra.iter().map(|&x| f(x, rb[0]))),
            (false, true) => out.extend(rb.iter().map(|&y| f(ra[0], y))),
            (false, false) => out.extend(std::iter::repeat_n(f(ra[0], rb[0]), cols)),
        }
    }
    Tensor::matrix(rows, cols, out).expect("broadcast shape")
}

/// Sums `g` down to `rows x cols` along broadcast axes.
fn reduce_to(g: &Tensor, rows: usize, cols: usize) -> Tensor {
    if g.rows() == rows && g.cols() == cols {
        return g.clone();
    }
    let mut out = Tensor::zeros(rows, cols);
    for i in 0..g.rows() {
        let src = g.row_slice(i);
        let oi = if rows == 1 { 0 } else { i };
        let dst = &mut out.data_mut()[oi * cols..(oi + 1) * cols];
        if cols == 1 {
            dst[0] += src.iter().sum::<f64>();
        } else {
            for (o, v) in dst.iter_mut().zip(src) {
                *o += v;
            }
        }
    }
    out
}

fn add_into(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data_mut().iter_mut().zip(g.data()) {
                *a += b;
            }
        }
        None => *slot = Some(g),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
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

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool, name: &'static str) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(name.to_string()));
        }
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        assert!(value.is_matrix(), "graph values are rank-2");
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that collects a gradient but is not bound to a parameter name.
    pub fn variable(&mut self, value: Tensor) -> Var {
        assert!(value.is_matrix(), "graph values are rank-2");
        self.nodes.push(Node { value, op: Op::Leaf, requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// Binds a named parameter from `store` as a gradient-collecting leaf.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .value(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?
            .clone();
        let v = self.variable(value);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Binds a parameter without gradient tracking (inference).
    pub fn frozen_param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        let value = store
            .value(name)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown parameter '{name}'")))?
            .clone();
        Ok(self.constant(value))
    }

    fn grad2(&self, a: Var, b: Var) -> bool {
        self.requires_grad(a) || self.requires_grad(b)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ar, ac) = dims(self.value(a), "matmul")?;
        let (br, bc) = dims(self.value(b), "matmul")?;
        if ac != br {
            return Err(Error::shape("matmul", format!("{ar}x{ac} times {br}x{bc}")));
        }
        let out = gemm(self.value(a), false, self.value(b), false);
        let rg = self.grad2(a, b);
        self.push(out, Op::MatMul(a, b), rg, "matmul")
    }

    pub fn spmm(&mut self, s: &Arc<SparseMatrix>, x: Var) -> Result<Var> {
        dims(self.value(x), "spmm")?;
        let out = s.matmul(self.value(x))?;
        let rg = self.requires_grad(x);
        self.push(out, Op::SpMM(Arc::clone(s), x), rg, "spmm")
    }

    fn binary(&mut self, a: Var, b: Var, name: &'static str, f: impl Fn(f64, f64) -> f64) -> Result<(Tensor, bool)> {
        let (ar, ac) = dims(self.value(a), name)?;
        let (br, bc) = dims(self.value(b), name)?;
        let (rows, cols) = match (broadcast_dim(ar, br), broadcast_dim(ac, bc)) {
            (Some(r), Some(c)) => (r, c),
            _ => return Err(Error::shape(name, format!("{ar}x{ac} vs {br}x{bc}"))),
        };
        let out = zip_broadcast(self.value(a), self.value(b), rows, cols, f);
        Ok((out, self.grad2(a, b)))
    }

    /// Elementwise sum with broadcasting of unit rows/columns.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "add", |x, y| x + y)?;
        self.push(out, Op::Add(a, b), rg, "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "sub", |x, y| x - y)?;
        self.push(out, Op::Sub(a, b), rg, "sub")
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (out, rg) = self.binary(a, b, "mul", |x, y| x * y)?;
        self.push(out, Op::Mul(a, b), rg, "mul")
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * c);
        let rg = self.requires_grad(x);
        self.push(out, Op::Scale(x, c), rg, "scale")
    }

    /// `x + c` for a constant `c`.
    pub fn offset(&mut self, x: Var, c: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v + c);
        let rg = self.requires_grad(x);
        self.push(out, Op::Offset(x), rg, "offset")
    }

    fn unary(&mut self, x: Var, op: Op, name: &'static str, f: impl Fn(f64) -> f64) -> Result<Var> {
        dims(self.value(x), name)?;
        let out = self.value(x).map(f);
        let rg = self.requires_grad(x);
        self.push(out, op, rg, name)
    }

    pub fn exp(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Exp(x), "exp", f64::exp)
    }

    pub fn log(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Log(x), "log", f64::ln)
    }

    pub fn sqrt(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sqrt(x), "sqrt", f64::sqrt)
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Sigmoid(x), "sigmoid", sigmoid)
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Relu(x), "relu", |v| v.max(0.0))
    }

    /// `log(1 + exp(x))`, evaluated without overflow.
    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        self.unary(x, Op::Softplus(x), "softplus", softplus)
    }

    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Result<Var> {
        self.unary(x, Op::Clamp(x, lo, hi), "clamp", |v| v.clamp(lo, hi))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        dims(self.value(x), "sum")?;
        let out = Tensor::scalar(self.value(x).sum());
        let rg = self.requires_grad(x);
        self.push(out, Op::Sum(x), rg, "sum")
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let n = self.value(x).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(x)?;
        self.scale(s, 1.0 / n as f64)
    }

    /// Sum over columns: `[n, m] -> [n, 1]`.
    pub fn sum_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x), "sum_rows")?;
        let xv = self.value(x);
        let out = Tensor::column((0..r).map(|i| xv.data()[i * c..(i + 1) * c].iter().sum()).collect());
        let rg = self.requires_grad(x);
        self.push(out, Op::SumRows(x), rg, "sum_rows")
    }

    /// Sum over rows: `[n, m] -> [1, m]`.
    pub fn sum_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x), "sum_cols")?;
        let xv = self.value(x);
        let mut acc = vec![0.0; c];
        for i in 0..r {
            for (a, v) in acc.iter_mut().zip(xv.row_slice(i)) {
                *a += v;
            }
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::row(acc), Op::SumCols(x), rg, "sum_cols")
    }

    pub fn mean_rows(&mut self, x: Var) -> Result<Var> {
        let c = self.shape(x).1;
        let s = self.sum_rows(x)?;
        self.scale(s, 1.0 / c.max(1) as f64)
    }

    pub fn mean_cols(&mut self, x: Var) -> Result<Var> {
        let r = self.shape(x).0;
        let s = self.sum_cols(x)?;
        self.scale(s, 1.0 / r.max(1) as f64)
    }

    /// Concatenation along the feature (column) axis.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = match parts.first() {
            Some(&p) => dims(self.value(p), "concat")?.0,
            None => return Err(Error::shape("concat", "no operands")),
        };
        let mut total = 0;
        for &p in parts {
            let (r, c) = dims(self.value(p), "concat")?;
            if r != rows {
                return Err(Error::shape("concat", format!("row counts {rows} vs {r}")));
            }
            total += c;
        }
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row_slice(i));
            }
        }
        let rg = parts.iter().any(|&p| self.requires_grad(p));
        self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), rg, "concat")
    }

    /// Columns `start..start + len`.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, c) = dims(self.value(x), "slice_cols")?;
        if start + len > c {
            return Err(Error::shape("slice_cols", format!("columns {start}..{} of {c}", start + len)));
        }
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&self.value(x).row_slice(i)[start..start + len]);
        }
        let rg = self.requires_grad(x);
        self.push(Tensor::matrix(rows, len, out)?, Op::SliceCols(x, start), rg, "slice_cols")
    }

    pub fn select_rows(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let (r, _) = dims(self.value(x), "select_rows")?;
        if let Some(&bad) = idx.iter().find(|&&i| i >= r) {
            return Err(Error::shape("select_rows", format!("row {bad} of {r}")));
        }
        let out = self.value(x).select_rows(idx);
        let rg = self.requires_grad(x);
        self.push(out, Op::SelectRows(x, idx.to_vec()), rg, "select_rows")
    }

    /// Rows where `mask` is true, in order.
    pub fn mask_rows(&mut self, x: Var, mask: &[bool]) -> Result<Var> {
        let idx: Vec<usize> = mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
        if mask.len() != self.shape(x).0 {
            return Err(Error::shape("mask_rows", format!("mask of {} for {} rows", mask.len(), self.shape(x).0)));
        }
        self.select_rows(x, &idx)
    }

    /// Picks elements by flat row-major index into a `[len, 1]` column.
    pub fn gather(&mut self, x: Var, flat: &[usize]) -> Result<Var> {
        let n = self.value(x).len();
        if let Some(&bad) = flat.iter().find(|&&i| i >= n) {
            return Err(Error::shape("gather", format!("index {bad} of {n}")));
        }
        let xv = self.value(x);
        let out = Tensor::column(flat.iter().map(|&i| xv.data()[i]).collect());
        let rg = self.requires_grad(x);
        self.push(out, Op::Gather(x, flat.to_vec()), rg, "gather")
    }

    /// `D_ij = ||a_i - b_j||^2` for row sets `a: [n, d]`, `b: [m, d]`.
    pub fn pairwise_sq_dist(&mut self, a: Var, b: Var) -> Result<Var> {
        let (n, d) = dims(self.value(a), "pairwise_sq_dist")?;
        let (m, d2) = dims(self.value(b), "pairwise_sq_dist")?;
        if d != d2 {
            return Err(Error::shape("pairwise_sq_dist", format!("dims {d} vs {d2}")));
        }
        let out = sq_dist_matrix(self.value(a), self.value(b));
        debug_assert_eq!(out.shape(), &[n, m]);
        let rg = self.grad2(a, b);
        self.push(out, Op::PairwiseSqDist(a, b), rg, "pairwise_sq_dist")
    }

    /// Row-wise log-sum-exp: `[n, m] -> [n, 1]`.
    pub fn logsumexp_rows(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x), "logsumexp_rows")?;
        if c == 0 {
            return Err(Error::shape("logsumexp_rows", "no columns"));
        }
        let xv = self.value(x);
        let out = Tensor::column((0..r).map(|i| logsumexp(xv.row_slice(i).iter().copied())).collect());
        let rg = self.requires_grad(x);
        self.push(out, Op::LogSumExpRows(x), rg, "logsumexp_rows")
    }

    /// Column-wise log-sum-exp: `[n, m] -> [1, m]`.
    pub fn logsumexp_cols(&mut self, x: Var) -> Result<Var> {
        let (r, c) = dims(self.value(x), "logsumexp_cols")?;
        if r == 0 {
            return Err(Error::shape("logsumexp_cols", "no rows"));
        }
        let xv = self.value(x);
        let out = Tensor::row((0..c).map(|j| logsumexp((0..r).map(|i| xv.data()[i * c + j]))).collect());
        let rg = self.requires_grad(x);
        self.push(out, Op::LogSumExpCols(x), rg, "logsumexp_cols")
    }

    /// Reverse sweep from scalar `loss`; returns gradients of every
    /// gradient-requiring node.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::shape("backward", format!("loss must be scalar, got {:?}", lt.shape())));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.requires_grad(loss) {
            return Ok(Gradients(grads));
        }
        grads[loss.0] = Some(Tensor::full(lt.rows(), lt.cols(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            self.propagate(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients(grads))
    }

    fn send(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if self.requires_grad(v) {
            add_into(&mut grads[v.0], g);
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(*a) {
                    self.send(grads, *a, gemm(g, false, self.value(*b), true));
                }
                if self.requires_grad(*b) {
                    self.send(grads, *b, gemm(self.value(*a), true, g, false));
                }
            }
            Op::SpMM(s, x) => {
                self.send(grads, *x, s.matmul_transposed(g).expect("shape checked in forward"));
            }
            Op::Add(a, b) | Op::Sub(a, b) => {
                let neg = matches!(node.op, Op::Sub(..));
                for (v, sign) in [(*a, 1.0), (*b, if neg { -1.0 } else { 1.0 })] {
                    if self.requires_grad(v) {
                        let (r, c) = self.shape(v);
                        let mut red = reduce_to(g, r, c);
                        if sign < 0.0 {
                            red = red.map(|x| -x);
                        }
                        self.send(grads, v, red);
                    }
                }
            }
            Op::Mul(a, b) => {
                let (rows, cols) = (g.rows(), g.cols());
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if self.requires_grad(v) {
                        let full = zip_broadcast(g, self.value(other), rows, cols, |x, y| x * y);
                        let (r, c) = self.shape(v);
                        self.send(grads, v, reduce_to(&full, r, c));
                    }
                }
            }
            Op::Scale(x, c) => self.send(grads, *x, g.map(|v| v * c)),
            Op::Offset(x) => self.send(grads, *x, g.clone()),
            Op::Exp(x) => self.send(grads, *x, elementwise(g, y, |g, y| g * y)),
            Op::Log(x) => self.send(grads, *x, elementwise(g, self.value(*x), |g, x| g / x)),
            Op::Sqrt(x) => self.send(grads, *x, elementwise(g, y, |g, y| if y > 0.0 { g / (2.0 * y) } else { 0.0 })),
            Op::Sigmoid(x) => self.send(grads, *x, elementwise(g, y, |g, y| g * y * (1.0 - y))),
            Op::Relu(x) => self.send(grads, *x, elementwise(g, self.value(*x), |g, x| if x > 0.0 { g } else { 0.0 })),
            Op::Softplus(x) => self.send(grads, *x, elementwise(g, self.value(*x), |g, x| g * sigmoid(x))),
            Op::Clamp(x, lo, hi) => self.send(
                grads,
                *x,
                elementwise(g, self.value(*x), |g, x| if x >= *lo && x <= *hi { g } else { 0.0 }),
            ),
            Op::Sum(x) => {
                let (r, c) = self.shape(*x);
                self.send(grads, *x, Tensor::full(r, c, g.item()));
            }
            Op::SumRows(x) => {
                let (r, c) = self.shape(*x);
                let data = (0..r).flat_map(|i| std::iter::repeat_n(g.data()[i], c)).collect();
                self.send(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::SumCols(x) => {
                let (r, c) = self.shape(*x);
                let data = (0..r).flat_map(|_| g.data().iter().copied()).collect();
                self.send(grads, *x, Tensor::matrix(r, c, data).expect("shape"));
            }
            Op::ConcatCols(parts) => {
                let rows = g.rows();
                let mut offset = 0;
                for &p in parts {
                    let c = self.shape(p).1;
                    if self.requires_grad(p) {
                        let mut data = Vec::with_capacity(rows * c);
                        for i in 0..rows {
                            data.extend_from_slice(&g.row_slice(i)[offset..offset + c]);
                        }
                        self.send(grads, p, Tensor::matrix(rows, c, data).expect("shape"));
                    }
                    offset += c;
                }
            }
            Op::SliceCols(x, start) => {
                let (r, c) = self.shape(*x);
                let len = g.cols();
                let mut out = Tensor::zeros(r, c);
                for i in 0..r {
                    out.data_mut()[i * c + start..i * c + start + len].copy_from_slice(g.row_slice(i));
                }
                self.send(grads, *x, out);
            }
            Op::SelectRows(x, idx) => {
                let (r, c) = self.shape(*x);
                let mut out = Tensor::zeros(r, c);
                for (k, &i) in idx.iter().enumerate() {
                    let dst = &mut out.data_mut()[i * c..(i + 1) * c];
                    for (o, v) in dst.iter_mut().zip(g.row_slice(k)) {
                        *o += v;
                    }
                }
                self.send(grads, *x, out);
            }
            Op::Gather(x, flat) => {
                let (r, c) = self.shape(*x);
                let mut out = Tensor::zeros(r, c);
                for (k, &i) in flat.iter().enumerate() {
                    out.data_mut()[i] += g.data()[k];
                }
                self.send(grads, *x, out);
            }
            Op::PairwiseSqDist(a, b) => {
                // dD_ij/da_i = 2(a_i - b_j), dD_ij/db_j = -2(a_i - b_j)
                let av = self.value(*a);
                let bv = self.value(*b);
                if self.requires_grad(*a) {
                    let row_sums: Vec<f64> = (0..g.rows()).map(|i| g.row_slice(i).iter().sum()).collect();
                    let gb = gemm(g, false, bv, false);
                    let d = av.cols();
                    let mut out = Tensor::zeros(av.rows(), d);
                    for i in 0..av.rows() {
                        for k in 0..d {
                            out.data_mut()[i * d + k] = 2.0 * (row_sums[i] * av.data()[i * d + k] - gb.data()[i * d + k]);
                        }
                    }
                    self.send(grads, *a, out);
                }
                if self.requires_grad(*b) {
                    let mut col_sums = vec![0.0; g.cols()];
                    for i in 0..g.rows() {
                        for (s, v) in col_sums.iter_mut().zip(g.row_slice(i)) {
                            *s += v;
                        }
                    }
                    let ga = gemm(g, true, av, false);
                    let d = bv.cols();
                    let mut out = Tensor::zeros(bv.rows(), d);
                    for j in 0..bv.rows() {
                        for k in 0..d {
                            out.data_mut()[j * d + k] = 2.0 * (col_sums[j] * bv.data()[j * d + k] - ga.data()[j * d + k]);
                        }
                    }
                    self.send(grads, *b, out);
                }
            }
            Op::LogSumExpRows(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut out = Tensor::zeros(xv.rows(), c);
                for i in 0..xv.rows() {
                    for j in 0..c {
                        out.data_mut()[i * c + j] = g.data()[i] * (xv.data()[i * c + j] - y.data()[i]).exp();
                    }
                }
                self.send(grads, *x, out);
            }
            Op::LogSumExpCols(x) => {
                let xv = self.value(*x);
                let c = xv.cols();
                let mut out = Tensor::zeros(xv.rows(), c);
                for i in 0..xv.rows() {
                    for j in 0..c {
                        out.data_mut()[i * c + j] = g.data()[j] * (xv.data()[i * c + j] - y.data()[j]).exp();
                    }
                }
                self.send(grads, *x, out);
            }
        }
    }

    /// Runs the reverse sweep, adds parameter gradients into `store`, and
    /// clears the tape.
    pub fn backward(&mut self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.gradients(loss)?;
        for (name, v) in &self.params {
            if let Some(g) = grads.get(*v) {
                if !g.all_finite() {
                    return Err(Error::NonFinite(format!("gradient of '{name}'")));
                }
                store.accumulate_grad(name, g)?;
            }
        }
        self.nodes.clear();
        self.params.clear();
        Ok(())
    }
}

fn elementwise(g: &Tensor, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = g.data().iter().zip(other.data()).map(|(&a, &b)| f(a, b)).collect();
    Tensor::new(g.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub(crate) fn sq_dist_matrix(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, d) = (a.rows(), a.cols());
    let m = b.rows();
    let mut out = Vec::with_capacity(n * m);
    for i in 0..n {
        let ai = a.row_slice(i);
        for j in 0..m {
            let bj = b.row_slice(j);
            out.push((0..d).map(|k| (ai[k] - bj[k]) * (ai[k] - bj[k])).sum());
        }
    }
    Tensor::matrix(n, m, out).expect("shape")
}
