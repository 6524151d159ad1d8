//! Tape-based reverse-mode differentiation over small dense matrices.
//!
//! A [`Tape`] records every operation applied to its [`Var`] handles. Nodes
//! are appended after their parents, so the node index order is a valid
//! topological order and [`Tape::backward`] is a single reverse sweep.
//!
//! ```
//! use neuralda_core::autodiff::Tape;
//! use neuralda_core::tensor::Tensor;
//!
//! let mut tape = Tape::new();
//! let theta = tape.param(Tensor::from_rows(&[[1.0, -2.0]]));
//! let sq = tape.mul(theta, theta).unwrap();
//! let loss = tape.sum(sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(theta).data(), &[2.0, -4.0]);
//! ```
//!
//! A tape is single-threaded and meant to be dropped after one backward
//! pass. Tapes built with [`Tape::no_grad`] compute identical forward values
//! but keep no backward information.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::Cholesky;
use crate::math;
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Exp(Var),
    Log(Var),
    Relu(Var),
    Transpose(Var),
    Sum(Var),
    LogSumExpRows(Var),
    SubCol(Var, Var),
    AddRow(Var, Var),
    KronIdentity(Var, usize),
    CholSolve { a: Var, b: Var, factor: Cholesky },
    CholLogDet { a: Var, factor: Cholesky },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss with respect to every node of a tape.
#[derive(Debug, Clone)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    /// Gradient for `var`; zeros if the loss does not depend on it.
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => {
                let (r, c) = self.shapes[var.0];
                Tensor::zeros(r, c)
            }
        }
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), recording: true }
    }

    /// A tape that evaluates forward values only.
    pub fn no_grad() -> Self {
        Self { nodes: Vec::new(), recording: false }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf whose gradient is wanted.
    pub fn param(&mut self, value: Tensor) -> Var {
        let needs_grad = self.recording;
        self.push_raw(value, Op::Leaf, needs_grad)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_raw(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push_raw(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn push(&mut self, value: Tensor, op: Op, parents: &[Var]) -> Var {
        let needs_grad = self.recording && parents.iter().any(|p| self.nodes[p.0].needs_grad);
        let op = if needs_grad { op } else { Op::Leaf };
        self.push_raw(value, op, needs_grad)
    }

    fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push(value, Op::MatMul(a, b), &[a, b]))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).add(self.value(b))?;
        Ok(self.push(value, Op::Add(a, b), &[a, b]))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).sub(self.value(b))?;
        Ok(self.push(value, Op::Sub(a, b), &[a, b]))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(value, Op::Mul(a, b), &[a, b]))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).scale(factor);
        self.push(value, Op::Scale(a, factor), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).map(math::exp);
        self.push(value, Op::Exp(a), &[a])
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if let Some(&bad) = x.data().iter().find(|v| !(**v > 0.0)) {
            return Err(Error::NonPositiveLog { value: bad });
        }
        let value = x.map(math::ln);
        Ok(self.push(value, Op::Log(a), &[a]))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        // NaN must propagate so divergence is detected downstream
        let value = self.value(a).map(|v| if v < 0.0 { 0.0 } else { v });
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).transpose();
        self.push(value, Op::Transpose(a), &[a])
    }

    /// Sum of all entries as a 1x1 tensor.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push(value, Op::Sum(a), &[a])
    }

    /// Row-wise `log Σ exp`, max-shifted, as a column vector.
    pub fn logsumexp_rows(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.rows() == 0 || x.cols() == 0 {
            return Err(Error::ShapeMismatch { op: "logsumexp_rows", left: x.shape(), right: (1, 1) });
        }
        let out: Vec<f64> = (0..x.rows()).map(|r| logsumexp(x.row(r))).collect();
        let value = Tensor::column(&out);
        Ok(self.push(value, Op::LogSumExpRows(a), &[a]))
    }

    /// `a - c` with the column vector `c` broadcast across columns.
    pub fn sub_col(&mut self, a: Var, c: Var) -> Result<Var> {
        let (x, col) = (self.value(a), self.value(c));
        if col.cols() != 1 || col.rows() != x.rows() {
            return Err(Error::ShapeMismatch { op: "sub_col", left: x.shape(), right: col.shape() });
        }
        let mut value = x.clone();
        let n = x.cols();
        for (r, chunk) in value.data_mut().chunks_mut(n).enumerate() {
            let s = col.data()[r];
            for v in chunk {
                *v -= s;
            }
        }
        Ok(self.push(value, Op::SubCol(a, c), &[a, c]))
    }

    /// `a + b` with the row vector `b` broadcast across rows.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, row) = (self.value(a), self.value(b));
        if row.rows() != 1 || row.cols() != x.cols() {
            return Err(Error::ShapeMismatch { op: "add_row", left: x.shape(), right: row.shape() });
        }
        let mut value = x.clone();
        let n = x.cols();
        for chunk in value.data_mut().chunks_mut(n) {
            for (v, b) in chunk.iter_mut().zip(row.data()) {
                *v += b;
            }
        }
        Ok(self.push(value, Op::AddRow(a, b), &[a, b]))
    }

    /// Kronecker product with `I_d`.
    pub fn kron_identity(&mut self, a: Var, d: usize) -> Var {
        let value = self.value(a).kron_identity(d);
        self.push(value, Op::KronIdentity(a, d), &[a])
    }

    /// Returns `(A⁻¹ B, log det A)` where `A` is first symmetrized and then
    /// factored with jitter escalation.
    pub fn cholesky_solve_logdet(&mut self, a: Var, b: Var) -> Result<(Var, Var)> {
        let factor = Cholesky::factor(self.value(a))?;
        let solved = factor.solve(self.value(b))?;
        let logdet = Tensor::scalar(factor.log_det());
        let x = self.push(solved, Op::CholSolve { a, b, factor: factor.clone() }, &[a, b]);
        let ld = self.push(logdet, Op::CholLogDet { a, factor }, &[a]);
        Ok((x, ld))
    }

    /// Reverse sweep from a 1x1 `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let shape = self.shape(loss);
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else {
                continue;
            };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }

        let shapes = self.nodes.iter().map(|n| n.value.shape()).collect();
        grads.resize(self.nodes.len(), None);
        Ok(Gradients { grads, shapes })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor>], var: Var, g: Tensor) {
        if !self.nodes[var.0].needs_grad {
            return;
        }
        match &mut grads[var.0] {
            Some(acc) => acc.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.matmul_unchecked(&bv.transpose()));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, av.transpose().matmul_unchecked(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.scale(-1.0));
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                self.accumulate(grads, *a, g.hadamard(bv)?);
                self.accumulate(grads, *b, g.hadamard(av)?);
            }
            Op::Scale(a, f) => self.accumulate(grads, *a, g.scale(*f)),
            Op::Exp(a) => self.accumulate(grads, *a, g.hadamard(&node.value)?),
            Op::Log(a) => {
                let x = self.value(*a);
                let mut out = g.clone();
                for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
                    *o /= v;
                }
                self.accumulate(grads, *a, out);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mut out = g.clone();
                for (o, v) in out.data_mut().iter_mut().zip(x.data()) {
                    if *v <= 0.0 {
                        *o = 0.0;
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.transpose()),
            Op::Sum(a) => {
                let (r, c) = self.shape(*a);
                self.accumulate(grads, *a, Tensor::filled(r, c, g.item()));
            }
            Op::LogSumExpRows(a) => {
                let x = self.value(*a);
                let mut out = x.clone();
                let n = x.cols();
                for (r, chunk) in out.data_mut().chunks_mut(n).enumerate() {
                    let lse = node.value.data()[r];
                    let gr = g.data()[r];
                    for v in chunk {
                        *v = gr * math::exp(*v - lse);
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::SubCol(a, c) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[c.0].needs_grad {
                    let sums: Vec<f64> = g.row_sums().into_iter().map(|s| -s).collect();
                    self.accumulate(grads, *c, Tensor::column(&sums));
                }
            }
            Op::AddRow(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.nodes[b.0].needs_grad {
                    let sums = g.col_sums();
                    self.accumulate(grads, *b, Tensor::from_vec(1, sums.len(), sums)?);
                }
            }
            Op::KronIdentity(a, d) => {
                let (n, m) = self.shape(*a);
                let mut out = Tensor::zeros(n, m);
                for i in 0..n {
                    for j in 0..m {
                        let mut s = 0.0;
                        for c in 0..*d {
                            s += g[(i * d + c, j * d + c)];
                        }
                        out[(i, j)] = s;
                    }
                }
                self.accumulate(grads, *a, out);
            }
            Op::CholSolve { a, b, factor } => {
                // X = A⁻¹B:  dB = A⁻¹ G,  dA = -dB Xᵀ (then symmetrized)
                let gb = factor.solve(g)?;
                if self.nodes[a.0].needs_grad {
                    let ga = gb.matmul_unchecked(&node.value.transpose()).scale(-1.0);
                    self.accumulate(grads, *a, ga.symmetrized());
                }
                self.accumulate(grads, *b, gb);
            }
            Op::CholLogDet { a, factor } => {
                let ga = factor.inverse().scale(g.item()).symmetrized();
                self.accumulate(grads, *a, ga);
            }
        }
        Ok(())
    }
}

/// Max-shifted `log Σ exp` of a slice.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    max + math::ln(values.iter().map(|v| math::exp(v - max)).sum::<f64>())
}
