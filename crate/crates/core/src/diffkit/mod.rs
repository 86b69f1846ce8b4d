//! Dense matrices, reverse-mode differentiation and the AdamW optimizer.
//!
//! Everything is a row-major `f64` matrix. A [`Graph`] records operations as
//! they run; [`Graph::backward`] returns gradients for every parameter in
//! the [`ParamStore`] the graph reads from.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

mod graph;
mod optim;

pub use graph::{log_softmax, Graph, Var};
pub use optim::{clip_global_norm, AdamW, AdamWConfig};

#[derive(Debug, Error, PartialEq)]
pub enum DiffError {
    #[error("non-finite value in node `{node}`")]
    NonFinite { node: String },
    #[error("shape mismatch for `{name}`: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn row_vector(data: Vec<f64>) -> Self {
        Self {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(x: f64) -> Self {
        Self::from_vec(1, 1, vec![x])
    }

    /// Uniform in `[-bound, bound]`.
    pub fn uniform(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Self {
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-bound..=bound))
            .collect();
        Self { rows, cols, data }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    /// `self · other`
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Matrix::zeros(self.rows, other.cols);
        gemm(
            self.rows,
            self.cols,
            other.cols,
            &self.data,
            (self.cols, 1),
            &other.data,
            (other.cols, 1),
            &mut out.data,
        );
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_nt(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "matmul_nt inner dimension");
        let mut out = Matrix::zeros(self.rows, other.rows);
        gemm(
            self.rows,
            self.cols,
            other.rows,
            &self.data,
            (self.cols, 1),
            &other.data,
            (1, other.cols),
            &mut out.data,
        );
        out
    }

    /// `selfᵀ · other`
    pub fn matmul_tn(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "matmul_tn inner dimension");
        let mut out = Matrix::zeros(self.cols, other.cols);
        gemm(
            self.cols,
            self.rows,
            other.cols,
            &self.data,
            (1, self.cols),
            &other.data,
            (other.cols, 1),
            &mut out.data,
        );
        out
    }
}

/// `c = a · b` for an `m×k` by `k×n` product; strides are `(row, col)`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    sa: (usize, usize),
    b: &[f64],
    sb: (usize, usize),
    c: &mut [f64],
) {
    if m == 0 || n == 0 || k == 0 {
        return;
    }
    debug_assert!(a.len() > (m - 1) * sa.0 + (k - 1) * sa.1);
    debug_assert!(b.len() > (k - 1) * sb.0 + (n - 1) * sb.1);
    debug_assert_eq!(c.len(), m * n);
    // SAFETY: the asserts above keep every strided access inside the slices.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            sa.0 as isize,
            sa.1 as isize,
            b.as_ptr(),
            sb.0 as isize,
            sb.1 as isize,
            0.0,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Handle to a parameter inside a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named parameter matrices. Shapes are fixed once added.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Matrix>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a parameter; panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, value: Matrix) -> ParamId {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter {name}"
        );
        let id = ParamId(self.values.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(value);
        id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix {
        &mut self.values[id.0]
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|m| m.data.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(Matrix::is_finite)
    }

    /// Zero-filled gradients shaped like the parameters.
    pub fn zeros_like(&self) -> Grads {
        Grads(
            self.values
                .iter()
                .map(|m| Matrix::zeros(m.rows, m.cols))
                .collect(),
        )
    }

    /// Named arrays in registration order.
    pub fn to_named(&self) -> Vec<NamedArray> {
        self.names
            .iter()
            .zip(&self.values)
            .map(|(name, m)| NamedArray {
                name: name.clone(),
                value: m.clone(),
            })
            .collect()
    }

    /// Copies values from `arrays` into this store, checking names and shapes.
    pub fn load_named(&mut self, arrays: &[NamedArray]) -> Result<(), DiffError> {
        if arrays.len() != self.len() {
            return Err(DiffError::Checkpoint(format!(
                "expected {} arrays, found {}",
                self.len(),
                arrays.len()
            )));
        }
        for a in arrays {
            let id = self
                .id(&a.name)
                .ok_or_else(|| DiffError::UnknownParam(a.name.clone()))?;
            let cur = &mut self.values[id.0];
            if cur.shape() != a.value.shape() || a.value.data.len() != a.value.rows * a.value.cols {
                return Err(DiffError::Shape {
                    name: a.name.clone(),
                    expected: cur.shape(),
                    found: a.value.shape(),
                });
            }
            if !a.value.is_finite() {
                return Err(DiffError::NonFinite {
                    node: a.name.clone(),
                });
            }
            *cur = a.value.clone();
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedArray {
    pub name: String,
    #[serde(flatten)]
    pub value: Matrix,
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Matrix>);

impl Grads {
    pub fn get(&self, id: ParamId) -> &Matrix {
        &self.0[id.0]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for m in &mut self.0 {
            m.data.iter_mut().for_each(|x| *x *= k);
        }
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().map(Matrix::sq_norm).sum::<f64>().sqrt()
    }
}
