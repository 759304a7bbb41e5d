//! Tensor-level reverse-mode gradient tape.
//!
//! Nodes are appended in evaluation order; [`Graph::grad`] replays them in
//! reverse, so the accumulation order (and therefore every bit of the result)
//! is a function of the recorded program alone.

use super::ad::{self, Ad, Real};
use super::tensor::{matmul, matmul_at, matmul_bt, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// A per-row kernel `ℝ^n_in → ℝ^n_out` applied independently to each row of a
/// matrix. Written once over [`Real`] so the graph can differentiate it with
/// scalar AD when gradients are needed.
pub trait RowKernel {
    fn n_out(&self) -> usize;
    fn eval<T: Real>(&self, row: &[T]) -> Vec<T>;
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MatMul(Var, Var),
    AddRow(Var, Var),
    Tanh(Var),
    Exp(Var),
    Ln(Var),
    Sum(Var),
    SumCols(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    GatherCols(Var, Vec<usize>),
    RowMap(Var, Vec<f64>),
    LogSoftmax(Var),
    Pick(Var, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recording of one forward computation.
pub struct Graph {
    nodes: Vec<Node>,
    grad_enabled: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: true }
    }

    /// A graph that only evaluates; row kernels skip their Jacobians.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), grad_enabled: false }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad: requires_grad && self.grad_enabled });
        Var(self.nodes.len() - 1)
    }

    fn req(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let r = self.req(a) || self.req(b);
        self.push(v, Op::Add(a, b), r)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let r = self.req(a) || self.req(b);
        self.push(v, Op::Sub(a, b), r)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let r = self.req(a) || self.req(b);
        self.push(v, Op::Mul(a, b), r)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        let r = self.req(a);
        self.push(v, Op::Scale(a, c), r)
    }

    /// `a (R×I) · w (I×O)`.
    pub fn matmul(&mut self, a: Var, w: Var) -> Var {
        let (rows, inner) = self.value(a).dims2();
        let (inner_w, cols) = self.value(w).dims2();
        assert_eq!(inner, inner_w, "matmul inner dimensions");
        let out = matmul(self.value(a).data(), self.value(w).data(), rows, inner, cols);
        let r = self.req(a) || self.req(w);
        self.push(Tensor::matrix(rows, cols, out), Op::MatMul(a, w), r)
    }

    /// Adds a bias row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (rows, cols) = self.value(a).dims2();
        assert_eq!(self.value(bias).len(), cols, "bias width");
        let b = self.value(bias).data().to_vec();
        let mut v = self.value(a).clone();
        for r in 0..rows {
            for (x, bv) in v.data_mut()[r * cols..(r + 1) * cols].iter_mut().zip(&b) {
                *x += bv;
            }
        }
        let r = self.req(a) || self.req(bias);
        self.push(v, Op::AddRow(a, bias), r)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let r = self.req(a);
        self.push(v, Op::Tanh(a), r)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        let r = self.req(a);
        self.push(v, Op::Exp(a), r)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::ln);
        let r = self.req(a);
        self.push(v, Op::Ln(a), r)
    }

    /// Sum of all entries; summation runs in storage order.
    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let r = self.req(a);
        self.push(v, Op::Sum(a), r)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Row sums, `R×N → R×1`.
    pub fn sum_cols(&mut self, a: Var) -> Var {
        let (rows, cols) = self.value(a).dims2();
        let d = self.value(a).data();
        let out = (0..rows).map(|r| d[r * cols..(r + 1) * cols].iter().sum()).collect();
        let r = self.req(a);
        self.push(Tensor::matrix(rows, 1, out), Op::SumCols(a), r)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.value(a).clone().reshaped(shape).expect("reshape size");
        let r = self.req(a);
        self.push(v, Op::Reshape(a), r)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let rows = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (r, c) = self.value(p).dims2();
                assert_eq!(r, rows, "concat row counts");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let req = parts.iter().any(|&p| self.req(p));
        self.push(Tensor::matrix(rows, total, out), Op::ConcatCols(parts.to_vec()), req)
    }

    /// Columns `start..end` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (rows, _) = self.value(a).dims2();
        let mut out = Vec::with_capacity(rows * (end - start));
        for r in 0..rows {
            out.extend_from_slice(&self.value(a).row(r)[start..end]);
        }
        let req = self.req(a);
        self.push(Tensor::matrix(rows, end - start, out), Op::SliceCols(a, start), req)
    }

    /// `out[:, j] = a[:, idx[j]]`; indices may repeat or skip columns.
    pub fn gather_cols(&mut self, a: Var, idx: &[usize]) -> Var {
        let (rows, cols) = self.value(a).dims2();
        assert!(idx.iter().all(|&i| i < cols), "gather index out of range");
        let mut out = Vec::with_capacity(rows * idx.len());
        for r in 0..rows {
            let row = self.value(a).row(r);
            out.extend(idx.iter().map(|&p| row[p]));
        }
        let req = self.req(a);
        self.push(Tensor::matrix(rows, idx.len(), out), Op::GatherCols(a, idx.to_vec()), req)
    }

    /// Applies `kernel` to each row of `a`.
    pub fn row_map<K: RowKernel>(&mut self, a: Var, kernel: &K) -> Var {
        let (rows, n_in) = self.value(a).dims2();
        let n_out = kernel.n_out();
        let need_jac = self.req(a);
        let mut out = Vec::with_capacity(rows * n_out);
        let mut jac = if need_jac { Vec::with_capacity(rows * n_out * n_in) } else { Vec::new() };
        for r in 0..rows {
            let row = self.value(a).row(r);
            if need_jac {
                let (v, j) = ad::jacobian(row, |xs: &[Ad]| kernel.eval(xs));
                debug_assert_eq!(v.len(), n_out);
                out.extend(v);
                jac.extend(j);
            } else {
                out.extend(kernel.eval::<f64>(row));
            }
        }
        self.push(Tensor::matrix(rows, n_out, out), Op::RowMap(a, jac), need_jac)
    }

    /// Row-wise log-softmax.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let (rows, cols) = self.value(a).dims2();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let row = self.value(a).row(r);
            let lse = super::log_sum_exp(row).expect("non-empty row");
            out.extend(row.iter().map(|x| x - lse));
        }
        let req = self.req(a);
        self.push(Tensor::matrix(rows, cols, out), Op::LogSoftmax(a), req)
    }

    /// `out[r] = a[r, idx[r]]`, `R×N → R×1`.
    pub fn pick(&mut self, a: Var, idx: &[usize]) -> Var {
        let (rows, _) = self.value(a).dims2();
        assert_eq!(idx.len(), rows, "pick index count");
        let out = (0..rows).map(|r| self.value(a).row(r)[idx[r]]).collect();
        let req = self.req(a);
        self.push(Tensor::matrix(rows, 1, out), Op::Pick(a, idx.to_vec()), req)
    }

    /// Reverse-mode gradients of the scalar `loss` with respect to `wrt`.
    /// The graph is cleared afterwards.
    pub fn grad(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Tensor>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "gradient needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if !self.grad_enabled {
            return Err(Error::contract("gradient requested on an inference graph"));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.backprop(i, &g, &mut adj);
            adj[i] = Some(g);
        }
        let grads = wrt
            .iter()
            .map(|&v| adj[v.0].take().unwrap_or_else(|| Tensor::zeros(self.value(v).shape())))
            .collect();
        self.nodes.clear();
        Ok(grads)
    }

    fn backprop(&self, i: usize, g: &Tensor, adj: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut adj[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => {
                    let shape = self.nodes[v.0].value.shape().to_vec();
                    *slot = Some(t.reshaped(&shape).expect("adjoint shape"));
                }
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(self.value(*b), |x, y| x * y));
                acc(*b, g.zip_map(self.value(*a), |x, y| x * y));
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::MatMul(a, w) => {
                let (rows, inner) = self.value(*a).dims2();
                let cols = self.value(*w).dims2().1;
                if self.req(*a) {
                    let ga = matmul_bt(g.data(), self.value(*w).data(), rows, inner, cols);
                    acc(*a, Tensor::matrix(rows, inner, ga));
                }
                if self.req(*w) {
                    let gw = matmul_at(self.value(*a).data(), g.data(), rows, inner, cols);
                    acc(*w, Tensor::matrix(inner, cols, gw));
                }
            }
            Op::AddRow(a, bias) => {
                acc(*a, g.clone());
                if self.req(*bias) {
                    let (rows, cols) = g.dims2();
                    let mut gb = vec![0.0; cols];
                    for r in 0..rows {
                        for (s, x) in gb.iter_mut().zip(g.row(r)) {
                            *s += x;
                        }
                    }
                    acc(*bias, Tensor::matrix(1, cols, gb));
                }
            }
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |x, y| x * (1.0 - y * y))),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |x, y| x * y)),
            Op::Ln(a) => acc(*a, g.zip_map(self.value(*a), |x, y| x / y)),
            Op::Sum(a) => acc(*a, Tensor::full(self.value(*a).shape(), g.item())),
            Op::SumCols(a) => {
                let (rows, cols) = self.value(*a).dims2();
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    out.extend(std::iter::repeat_n(g.data()[r], cols));
                }
                acc(*a, Tensor::matrix(rows, cols, out));
            }
            Op::Reshape(a) => acc(*a, g.clone()),
            Op::ConcatCols(parts) => {
                let rows = g.dims2().0;
                let total = g.dims2().1;
                let mut offset = 0;
                for &p in parts {
                    let w = self.value(p).dims2().1;
                    if self.req(p) {
                        let mut out = Vec::with_capacity(rows * w);
                        for r in 0..rows {
                            out.extend_from_slice(&g.data()[r * total + offset..r * total + offset + w]);
                        }
                        acc(p, Tensor::matrix(rows, w, out));
                    }
                    offset += w;
                }
            }
            Op::SliceCols(a, start) => {
                let (rows, cols) = self.value(*a).dims2();
                let w = g.dims2().1;
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    out[r * cols + start..r * cols + start + w].copy_from_slice(g.row(r));
                }
                acc(*a, Tensor::matrix(rows, cols, out));
            }
            Op::GatherCols(a, idx) => {
                let (rows, cols) = self.value(*a).dims2();
                let width = idx.len();
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    for (j, &p) in idx.iter().enumerate() {
                        out[r * cols + p] += g.data()[r * width + j];
                    }
                }
                acc(*a, Tensor::matrix(rows, cols, out));
            }
            Op::RowMap(a, jac) => {
                let (rows, n_in) = self.value(*a).dims2();
                let n_out = g.dims2().1;
                let mut out = vec![0.0; rows * n_in];
                for r in 0..rows {
                    let gr = &g.data()[r * n_out..(r + 1) * n_out];
                    let jr = &jac[r * n_out * n_in..(r + 1) * n_out * n_in];
                    let o = &mut out[r * n_in..(r + 1) * n_in];
                    for (k, &gk) in gr.iter().enumerate() {
                        if gk == 0.0 {
                            continue;
                        }
                        for (oi, &j) in o.iter_mut().zip(&jr[k * n_in..(k + 1) * n_in]) {
                            *oi += gk * j;
                        }
                    }
                }
                acc(*a, Tensor::matrix(rows, n_in, out));
            }
            Op::LogSoftmax(a) => {
                let (rows, cols) = g.dims2();
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    let gs: f64 = g.row(r).iter().sum();
                    for (gx, y) in g.row(r).iter().zip(node.value.row(r)) {
                        out.push(gx - y.exp() * gs);
                    }
                }
                acc(*a, Tensor::matrix(rows, cols, out));
            }
            Op::Pick(a, idx) => {
                let (rows, cols) = self.value(*a).dims2();
                let mut out = vec![0.0; rows * cols];
                for r in 0..rows {
                    out[r * cols + idx[r]] = g.data()[r];
                }
                acc(*a, Tensor::matrix(rows, cols, out));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Square;
    impl RowKernel for Square {
        fn n_out(&self) -> usize {
            1
        }
        fn eval<T: Real>(&self, row: &[T]) -> Vec<T> {
            vec![row[0] * row[0] + row[1]]
        }
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let theta = g.param(Tensor::scalar(3.0));
        let loss = g.mul(theta, theta);
        let grads = g.grad(loss, &[theta]).unwrap();
        assert_eq!(grads[0].item(), 6.0);
        assert!(g.is_empty(), "tape cleared after grad");
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut g = Graph::new();
        let a = g.param(Tensor::zeros(&[2]));
        assert!(matches!(g.grad(a, &[a]), Err(Error::Contract(_))));
    }

    #[test]
    fn softmax_cross_entropy_uniform_logits() {
        let mut g = Graph::new();
        let logits = g.param(Tensor::matrix(1, 4, vec![0.0; 4]));
        let lp = g.log_softmax(logits);
        let picked = g.pick(lp, &[0]);
        let s = g.sum(picked);
        let loss = g.scale(s, -1.0);
        let grads = g.grad(loss, &[logits]).unwrap();
        let expected = [-0.75, 0.25, 0.25, 0.25];
        for (a, b) in grads[0].data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
    }

    #[test]
    fn row_map_chains_into_matmul() {
        let mut g = Graph::new();
        let x = g.param(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]));
        let y = g.row_map(x, &Square);
        let s = g.sum(y);
        let grads = g.grad(s, &[x]).unwrap();
        assert_eq!(grads[0].data(), &[2.0, 1.0, 6.0, 1.0]);
    }

    #[test]
    fn inference_graph_refuses_gradients() {
        let mut g = Graph::inference();
        let a = g.param(Tensor::scalar(1.0));
        let b = g.mul(a, a);
        assert!(g.grad(b, &[a]).is_err());
    }
}
