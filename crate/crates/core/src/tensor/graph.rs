//! Reverse-mode automatic differentiation over whole tensors.
//!
//! A [`Graph`] is an append-only list of nodes. Each op pushes its output,
//! so node order is a topological order and [`Graph::backward`] is a single
//! reverse sweep that visits every node at most once.

use super::{add_row, matmul_t, sum_cols, Tensor};
use crate::error::{contract, Error, Result};

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Tanh(Var),
    Relu(Var),
    Exp(Var),
    Square(Var),
    LogSoftmax(Var),
    Gather(Var, Vec<usize>),
    Clamp(Var, f64, f64),
    Maximum(Var, Var),
    Sum(Var),
    Mean(Var),
    SumRows(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A differentiable input (typically a parameter).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A value that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Copies `v` into a fresh constant, cutting gradient flow.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn needs_grad(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Tensor, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn unary(&mut self, a: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad;
        self.push(value, op, ng)
    }

    fn binary(&mut self, a: Var, b: Var, value: Tensor, op: Op) -> Var {
        let ng = self.nodes[a.0].needs_grad || self.nodes[b.0].needs_grad;
        self.push(value, op, ng)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = matmul_t(self.value(a), false, self.value(b), false)?;
        Ok(self.binary(a, b, v, Op::MatMul(a, b)))
    }

    pub fn add_row(&mut self, x: Var, bias: Var) -> Result<Var> {
        let v = add_row(self.value(x), self.value(bias))?;
        Ok(self.binary(x, bias, v, Op::AddRow(x, bias)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.binary(a, b, v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.binary(a, b, v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.binary(a, b, v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.unary(a, v, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x + c);
        self.unary(a, v, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.scale(a, -1.0)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        self.unary(a, v, Op::Tanh(a))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x.max(0.0));
        self.unary(a, v, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::exp);
        self.unary(a, v, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| x * x);
        self.unary(a, v, Op::Square(a))
    }

    /// Row-wise log-softmax of a matrix (or of a single vector).
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let c = x.cols();
        let mut out = Vec::with_capacity(x.len());
        for r in 0..x.rows() {
            out.extend(super::log_softmax_row(x.row(r)));
        }
        let v = Tensor::new(x.shape().to_vec(), out).expect("same shape");
        debug_assert_eq!(v.cols(), c);
        self.unary(a, v, Op::LogSoftmax(a))
    }

    /// Picks `x[i, idx[i]]` for every row, giving a `[rows]` vector.
    pub fn gather(&mut self, x: Var, idx: &[usize]) -> Result<Var> {
        let t = self.value(x);
        if idx.len() != t.rows() {
            return Err(Error::Shape(format!(
                "gather: {} indices for {} rows",
                idx.len(),
                t.rows()
            )));
        }
        let c = t.cols();
        let mut out = Vec::with_capacity(idx.len());
        for (r, &j) in idx.iter().enumerate() {
            if j >= c {
                return Err(Error::Shape(format!("gather index {j} out of {c} columns")));
            }
            out.push(t.row(r)[j]);
        }
        let v = Tensor::vector(out);
        Ok(self.unary(x, v, Op::Gather(x, idx.to_vec())))
    }

    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        self.unary(a, v, Op::Clamp(a, lo, hi))
    }

    /// Elementwise maximum; ties split the gradient evenly.
    pub fn maximum(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).zip_map(self.value(b), f64::max)?;
        Ok(self.binary(a, b, v, Op::Maximum(a, b)))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        self.unary(a, v, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let n = t.len().max(1) as f64;
        let v = Tensor::scalar(t.sum() / n);
        self.unary(a, v, Op::Mean(a))
    }

    /// Sums each row of a matrix, giving a `[rows]` vector.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let out: Vec<f64> = (0..t.rows()).map(|r| t.row(r).iter().sum()).collect();
        let v = Tensor::vector(out);
        self.unary(a, v, Op::SumRows(a))
    }

    /// Backpropagates from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        contract!(
            self.nodes[loss.0].value.len() == 1,
            "backward needs a scalar loss, got shape {:?}",
            self.nodes[loss.0].value.shape()
        );
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::new(self.nodes[loss.0].value.shape().to_vec(), vec![1.0])?);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let val = |v: Var| &self.nodes[v.0].value;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        let mut acc = |v: Var, t: Tensor| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t),
                slot @ None => *slot = Some(t),
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                if wants(*a) {
                    let ga = matmul_t(g, false, val(*b), true)?;
                    acc(*a, reshape_like(ga, val(*a)));
                }
                if wants(*b) {
                    let gb = matmul_t(val(*a), true, g, false)?;
                    acc(*b, reshape_like(gb, val(*b)));
                }
            }
            Op::AddRow(x, b) => {
                acc(*x, g.clone());
                if wants(*b) {
                    acc(*b, reshape_like(sum_cols(g), val(*b)));
                }
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                if wants(*a) {
                    acc(*a, g.zip_map(val(*b), |x, y| x * y)?);
                }
                if wants(*b) {
                    acc(*b, g.zip_map(val(*a), |x, y| x * y)?);
                }
            }
            Op::Scale(a, c) => acc(*a, g.map(|x| x * c)),
            Op::AddScalar(a) => acc(*a, g.clone()),
            Op::Tanh(a) => acc(*a, g.zip_map(&node.value, |gy, y| gy * (1.0 - y * y))?),
            Op::Relu(a) => acc(
                *a,
                g.zip_map(val(*a), |gy, x| if x > 0.0 { gy } else { 0.0 })?,
            ),
            Op::Exp(a) => acc(*a, g.zip_map(&node.value, |gy, y| gy * y)?),
            Op::Square(a) => acc(*a, g.zip_map(val(*a), |gy, x| 2.0 * x * gy)?),
            Op::LogSoftmax(a) => {
                // d/dx_j = g_j - softmax_j * sum_k g_k
                let y = &node.value;
                let c = y.cols();
                let mut out = Vec::with_capacity(y.len());
                for r in 0..y.rows() {
                    let gr = g.row(r);
                    let s: f64 = gr.iter().sum();
                    out.extend(y.row(r).iter().zip(gr).map(|(ly, gy)| gy - ly.exp() * s));
                }
                debug_assert_eq!(out.len() % c.max(1), 0);
                acc(*a, Tensor::new(y.shape().to_vec(), out)?);
            }
            Op::Gather(x, idx) => {
                let src = val(*x);
                let mut out = Tensor::zeros(src.shape());
                let c = src.cols();
                for (r, &j) in idx.iter().enumerate() {
                    out.data_mut()[r * c + j] += g.data()[r];
                }
                acc(*x, out);
            }
            Op::Clamp(a, lo, hi) => acc(
                *a,
                g.zip_map(val(*a), |gy, x| if x >= *lo && x <= *hi { gy } else { 0.0 })?,
            ),
            Op::Maximum(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let share = |x: f64, y: f64| {
                    if x > y {
                        1.0
                    } else if x < y {
                        0.0
                    } else {
                        0.5
                    }
                };
                if wants(*a) {
                    let w = va.zip_map(vb, share)?;
                    acc(*a, g.zip_map(&w, |gy, s| gy * s)?);
                }
                if wants(*b) {
                    let w = vb.zip_map(va, share)?;
                    acc(*b, g.zip_map(&w, |gy, s| gy * s)?);
                }
            }
            Op::Sum(a) => {
                let gy = g.data()[0];
                acc(*a, Tensor::full(val(*a).shape(), gy));
            }
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                let gy = g.data()[0] / n;
                acc(*a, Tensor::full(val(*a).shape(), gy));
            }
            Op::SumRows(a) => {
                let src = val(*a);
                let c = src.cols();
                let mut out = Vec::with_capacity(src.len());
                for &gy in g.data() {
                    out.extend(std::iter::repeat_n(gy, c));
                }
                acc(*a, Tensor::new(src.shape().to_vec(), out)?);
            }
        }
        Ok(())
    }
}

fn reshape_like(t: Tensor, like: &Tensor) -> Tensor {
    if t.shape() == like.shape() {
        t
    } else {
        Tensor::new(like.shape().to_vec(), t.into_data()).expect("same element count")
    }
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    /// Gradient for `v`, or `None` when no path from the loss reaches it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient for a leaf, materialising zeros when the loss ignores it.
    pub fn wrt(&self, graph: &Graph, v: Var) -> Tensor {
        self.get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(graph.value(v).shape()))
    }
}
