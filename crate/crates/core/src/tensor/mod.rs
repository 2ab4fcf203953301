//! Minimal dense tensors with reverse-mode differentiation.
//!
//! Everything here is `f64`, row-major and CPU-only. Matrices are rank-2
//! tensors `[rows, cols]`; vectors are rank-1. The same kernels back both
//! the graph-free inference path ([`nn::Mlp::forward`]) and the recorded
//! path ([`graph::Graph`]), so the two produce bit-identical values.

pub mod adam;
pub mod dist;
pub mod graph;
pub mod nn;
pub mod store;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use adam::{clip_global_norm, AdamConfig, AdamState};
pub use dist::{log_softmax_row, sample_categorical, softmax, softmax_row};
pub use graph::{Gradients, Graph, Var};
pub use nn::{Activation, BoundLinear, BoundMlp, Linear, Mlp, Parameterized};
pub use store::TensorStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a `[rows, cols]` matrix from a flat row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            if r.len() != cols {
                return Err(Error::Shape("ragged rows".into()));
            }
            data.extend_from_slice(r);
        }
        Self::matrix(rows.len(), cols, data)
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

    /// Number of rows when viewed as a matrix (vectors are a single row).
    pub fn rows(&self) -> usize {
        match self.shape.len() {
            0 | 1 => 1,
            _ => self.shape[..self.shape.len() - 1].iter().product(),
        }
    }

    /// Size of the last dimension.
    pub fn cols(&self) -> usize {
        self.shape.last().copied().unwrap_or(1)
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(Error::Shape(format!("expected a scalar, got shape {:?}", self.shape)));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::Shape(format!(
                "elementwise op on {:?} and {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().zip(&other.data).map(|(&a, &b)| f(a, b)).collect(),
        })
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Copies the selected rows into a new `[idx.len(), cols]` matrix.
    pub fn select_rows(&self, idx: &[usize]) -> Tensor {
        let c = self.cols();
        let mut data = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Tensor {
            shape: vec![idx.len(), c],
            data,
        }
    }
}

fn as_matrix(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match t.shape.len() {
        1 => Ok((1, t.shape[0])),
        2 => Ok((t.shape[0], t.shape[1])),
        _ => Err(Error::Shape(format!("{what}: expected a matrix, got {:?}", t.shape))),
    }
}

/// `a @ b` with optional transposition of either operand.
///
/// Transposes are expressed through strides, so no copies are made.
pub fn matmul_t(a: &Tensor, ta: bool, b: &Tensor, tb: bool) -> Result<Tensor> {
    let (ar, ac) = as_matrix(a, "matmul lhs")?;
    let (br, bc) = as_matrix(b, "matmul rhs")?;
    let (m, k, rsa, csa) = if ta { (ac, ar, 1, ac) } else { (ar, ac, ac, 1) };
    let (k2, n, rsb, csb) = if tb { (bc, br, 1, bc) } else { (br, bc, bc, 1) };
    if k != k2 {
        return Err(Error::Shape(format!(
            "matmul inner dimensions differ: {:?}{} x {:?}{}",
            a.shape,
            if ta { "^T" } else { "" },
            b.shape,
            if tb { "^T" } else { "" }
        )));
    }
    let mut out = vec![0.0; m * n];
    if m > 0 && n > 0 && k > 0 {
        // SAFETY: pointers and strides describe the live buffers of `a`, `b`
        // and `out`, whose extents were checked against (m, k, n) above.
        unsafe {
            matrixmultiply::dgemm(
                m,
                k,
                n,
                1.0,
                a.data.as_ptr(),
                rsa as isize,
                csa as isize,
                b.data.as_ptr(),
                rsb as isize,
                csb as isize,
                0.0,
                out.as_mut_ptr(),
                n as isize,
                1,
            );
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_t(a, false, b, false)
}

/// Adds a `[cols]` bias to every row of `x`.
pub fn add_row(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = x.cols();
    if bias.len() != c {
        return Err(Error::Shape(format!(
            "bias of length {} against rows of width {c}",
            bias.len()
        )));
    }
    let mut out = x.clone();
    for row in out.data.chunks_mut(c.max(1)) {
        for (v, b) in row.iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
    Ok(out)
}

/// Column sums of a matrix, as a `[cols]` vector.
pub fn sum_cols(x: &Tensor) -> Tensor {
    let c = x.cols();
    let mut out = vec![0.0; c];
    for row in x.data.chunks(c.max(1)) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    Tensor::vector(out)
}
