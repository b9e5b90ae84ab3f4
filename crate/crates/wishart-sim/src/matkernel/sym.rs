use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Result, SimError};

/// Real symmetric d x d matrix with packed lower-triangle storage.
///
/// A single coefficient is stored per unordered index pair, so the value is
/// symmetric by construction. This is the state-space element of every
/// process in the engine.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    // packed lower triangle, row-major: entry (i, j) with i >= j at i(i+1)/2 + j
    data: Vec<f64>,
}

#[inline]
fn packed_index(i: usize, j: usize) -> usize {
    let (lo, hi) = if i >= j { (j, i) } else { (i, j) };
    hi * (hi + 1) / 2 + lo
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: vec![0.0; dim * (dim + 1) / 2] }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, 1.0);
        }
        m
    }

    /// Identity truncated to its first `n` diagonal entries.
    pub fn identity_n(dim: usize, n: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..n.min(dim) {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn scaled_identity(dim: usize, lambda: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, lambda);
        }
        m
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..=i {
                m.set(i, j, f(i, j));
            }
        }
        m
    }

    /// Build from a dense matrix, symmetrizing as (m + m^T)/2.
    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "SymMatrix requires a square matrix");
        Self::from_fn(m.nrows(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    /// Build from nested rows (row-major), symmetrizing.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.len();
        for r in rows {
            if r.len() != d {
                return Err(SimError::IncompatibleDims(r.len(), d));
            }
        }
        let m = Self::from_fn(d, |i, j| 0.5 * (rows[i][j] + rows[j][i]));
        m.check_finite("SymMatrix::from_rows")?;
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[packed_index(i, j)]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[packed_index(i, j)] = v;
    }

    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: f64) {
        self.data[packed_index(i, j)] += v;
    }

    pub fn packed(&self) -> &[f64] {
        &self.data
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn frobenius_norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let v = self.get(i, j);
                s += v * v;
            }
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn check_finite(&self, ctx: &'static str) -> Result<()> {
        if self.is_finite() {
            Ok(())
        } else {
            Err(SimError::NonFinite(ctx))
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, data: self.data.iter().map(|v| v * s).collect() }
    }

    pub fn add(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        assert_eq!(self.dim, other.dim);
        Self {
            dim: self.dim,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    /// Trace of the product Tr(self * other); both symmetric.
    pub fn trace_product(&self, other: &Self) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.get(i, j) * other.get(j, i);
            }
        }
        s
    }

    /// Congruence transform g * self * g^T, symmetric by construction.
    pub fn congruence(&self, g: &DMatrix<f64>) -> Self {
        let m = g * self.to_dense() * g.transpose();
        Self::from_dense(&m)
    }

    /// Principal submatrix on the index range lo..hi (exclusive).
    pub fn submatrix(&self, lo: usize, hi: usize) -> Self {
        Self::from_fn(hi - lo, |i, j| self.get(lo + i, lo + j))
    }

    /// Symmetric permutation: result[i, j] = self[perm[i], perm[j]].
    pub fn permute(&self, perm: &[usize]) -> Self {
        assert_eq!(perm.len(), self.dim);
        Self::from_fn(self.dim, |i, j| self.get(perm[i], perm[j]))
    }

    /// Eigenvalues (ascending) of the symmetric matrix.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let eig = self.to_dense().symmetric_eigen();
        let mut v: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v
    }

    pub fn min_eigenvalue(&self) -> f64 {
        self.eigenvalues()[0]
    }
}

/// Complex symmetric matrix v = v_R + i v_I with both parts symmetric.
#[derive(Debug, Clone)]
pub struct ComplexSymMatrix {
    pub re: SymMatrix,
    pub im: SymMatrix,
}

impl ComplexSymMatrix {
    pub fn new(re: SymMatrix, im: SymMatrix) -> Result<Self> {
        if re.dim() != im.dim() {
            return Err(SimError::IncompatibleDims(re.dim(), im.dim()));
        }
        Ok(Self { re, im })
    }

    /// Purely real argument.
    pub fn real(re: SymMatrix) -> Self {
        let d = re.dim();
        Self { re, im: SymMatrix::zeros(d) }
    }

    /// Purely imaginary argument i * v.
    pub fn imaginary(v: SymMatrix) -> Self {
        let d = v.dim();
        Self { re: SymMatrix::zeros(d), im: v }
    }

    pub fn dim(&self) -> usize {
        self.re.dim()
    }

    pub fn is_real_zero(&self) -> bool {
        self.re.packed().iter().all(|&v| v == 0.0)
    }

    pub fn to_dense(&self) -> DMatrix<Complex64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| Complex64::new(self.re.get(i, j), self.im.get(i, j)))
    }
}
