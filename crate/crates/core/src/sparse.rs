//! Compressed-row complex matrices and the matrix-action interface used by
//! the propagators.
//!
//! Composite cavity⊗phonon operators are banded in the Fock basis (a handful
//! of nonzeros per row), so all time stepping on the composite space goes
//! through [`SparseMatrix`] rather than dense storage.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;

use crate::par::{self, Execution};

/// Below this dimension column loops stay on the calling thread.
const PAR_MIN_DIM: usize = 64;

/// Anything that can compute `y = A x` for a square `A`.
pub trait LinearAction: Sync {
    fn dim(&self) -> usize;

    /// Overwrites `y` with `A x`.
    fn apply(&self, x: &[C64], y: &mut [C64]);

    /// Upper bound on the induced 1-norm, used to choose Taylor orders.
    fn norm_bound(&self) -> f64;
}

/// Square complex matrix in CSR layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<C64>,
}

impl SparseMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, row_ptr: vec![0; dim + 1], cols: Vec::new(), vals: Vec::new() }
    }

    pub fn identity(dim: usize) -> Self {
        Self::from_triplets(dim, (0..dim).map(|i| (i, i, C64::new(1.0, 0.0))))
    }

    /// Builds from `(row, col, value)` entries; duplicates are summed and
    /// exact zeros dropped.
    pub fn from_triplets<I>(dim: usize, entries: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, C64)>,
    {
        let mut rows: Vec<Vec<(usize, C64)>> = vec![Vec::new(); dim];
        for (r, c, v) in entries {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) out of range for dim {dim}");
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(c, _)| c);
            let mut iter = row.into_iter().peekable();
            while let Some((c, mut v)) = iter.next() {
                while let Some(&(c2, v2)) = iter.peek() {
                    if c2 != c {
                        break;
                    }
                    v += v2;
                    iter.next();
                }
                if v != C64::new(0.0, 0.0) {
                    cols.push(c);
                    vals.push(v);
                }
            }
            row_ptr.push(cols.len());
        }
        Self { dim, row_ptr, cols, vals }
    }

    /// Keeps entries with modulus above `drop_tol`.
    pub fn from_dense(m: &DMatrix<C64>, drop_tol: f64) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "sparse matrices are square");
        let dim = m.nrows();
        let mut entries = Vec::new();
        for r in 0..dim {
            for c in 0..dim {
                let v = m[(r, c)];
                if v.norm() > drop_tol {
                    entries.push((r, c, v));
                }
            }
        }
        Self::from_triplets(dim, entries)
    }

    /// Kronecker product `A ⊗ B` of two dense factors.
    pub fn kron(a: &DMatrix<C64>, b: &DMatrix<C64>) -> Self {
        let (ra, ca) = (a.nrows(), a.ncols());
        let (rb, cb) = (b.nrows(), b.ncols());
        assert!(ra == ca && rb == cb, "kron factors must be square");
        let mut entries = Vec::new();
        let b_nz: Vec<(usize, usize, C64)> = (0..rb)
            .flat_map(|i| (0..cb).map(move |j| (i, j)))
            .filter_map(|(i, j)| {
                let v = b[(i, j)];
                (v != C64::new(0.0, 0.0)).then_some((i, j, v))
            })
            .collect();
        for i in 0..ra {
            for j in 0..ca {
                let va = a[(i, j)];
                if va == C64::new(0.0, 0.0) {
                    continue;
                }
                for &(k, l, vb) in &b_nz {
                    entries.push((i * rb + k, j * cb + l, va * vb));
                }
            }
        }
        Self::from_triplets(ra * rb, entries)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    /// Iterates `(row, col, value)` over stored entries.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, C64)> + '_ {
        (0..self.dim).flat_map(move |r| {
            (self.row_ptr[r]..self.row_ptr[r + 1]).map(move |p| (r, self.cols[p], self.vals[p]))
        })
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let mut m = DMatrix::zeros(self.dim, self.dim);
        for (r, c, v) in self.iter() {
            m[(r, c)] += v;
        }
        m
    }

    pub fn adjoint(&self) -> Self {
        Self::from_triplets(self.dim, self.iter().map(|(r, c, v)| (c, r, v.conj())))
    }

    pub fn scale(&self, s: C64) -> Self {
        let mut out = self.clone();
        out.vals.iter_mut().for_each(|v| *v *= s);
        out
    }

    /// `Σ cᵢ Mᵢ` over matrices of equal dimension.
    pub fn linear_combination(dim: usize, terms: &[(C64, &SparseMatrix)]) -> Self {
        let entries = terms.iter().flat_map(|(c, m)| {
            assert_eq!(m.dim, dim, "dimension mismatch in linear combination");
            m.iter().map(move |(r, col, v)| (r, col, *c * v))
        });
        Self::from_triplets(dim, entries.collect::<Vec<_>>())
    }

    pub fn matmul(&self, other: &SparseMatrix) -> Self {
        assert_eq!(self.dim, other.dim);
        let mut entries = Vec::new();
        for (r, k, v) in self.iter() {
            for p in other.row_ptr[k]..other.row_ptr[k + 1] {
                entries.push((r, other.cols[p], v * other.vals[p]));
            }
        }
        Self::from_triplets(self.dim, entries)
    }

    /// `y += alpha * A x`.
    pub fn apply_acc(&self, alpha: C64, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.dim) {
            let mut acc = C64::new(0.0, 0.0);
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *yr += alpha * acc;
        }
    }

    /// Maximum absolute column sum.
    pub fn norm_one(&self) -> f64 {
        let mut colsum = vec![0.0; self.dim];
        for (_, c, v) in self.iter() {
            colsum[c] += v.norm();
        }
        colsum.into_iter().fold(0.0, f64::max)
    }

    /// `A ρ` for a dense square `ρ` (column-major, so each column is a
    /// contiguous matvec).
    pub fn mul_dense(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        self.mul_dense_with(rho, Execution::default())
    }

    /// [`mul_dense`](Self::mul_dense) with columns optionally split across
    /// the thread pool.
    pub fn mul_dense_with(&self, rho: &DMatrix<C64>, exec: Execution) -> DMatrix<C64> {
        let n = self.dim;
        assert_eq!(rho.nrows(), n);
        let src = rho.as_slice();
        let mut out = DMatrix::zeros(n, rho.ncols());
        let exec = if n < PAR_MIN_DIM { Execution::Sequential } else { exec };
        par::for_each_chunk_mut(exec, out.as_mut_slice(), n, |j, col| self.apply(&src[j * n..(j + 1) * n], col));
        out
    }

    /// `ρ A` for a dense square `ρ`.
    pub fn dense_mul(&self, rho: &DMatrix<C64>) -> DMatrix<C64> {
        let n = self.dim;
        assert_eq!(rho.ncols(), n);
        let mut out = DMatrix::zeros(rho.nrows(), n);
        for (k, j, v) in self.iter() {
            let src = rho.column(k).into_owned();
            let mut dst = out.column_mut(j);
            dst.axpy(v, &src, C64::new(1.0, 0.0));
        }
        out
    }

    pub fn mul_vec(&self, x: &DVector<C64>) -> DVector<C64> {
        let mut y = DVector::zeros(self.dim);
        self.apply(x.as_slice(), y.as_mut_slice());
        y
    }

    /// Largest entry of `|A − A†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        let dense = self.to_dense();
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for c in 0..self.dim {
                worst = worst.max((dense[(r, c)] - dense[(c, r)].conj()).norm());
            }
        }
        worst
    }
}

impl LinearAction for SparseMatrix {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        for (r, yr) in y.iter_mut().enumerate().take(self.dim) {
            let mut acc = C64::new(0.0, 0.0);
            for p in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.vals[p] * x[self.cols[p]];
            }
            *yr = acc;
        }
    }

    fn norm_bound(&self) -> f64 {
        self.norm_one()
    }
}

impl LinearAction for DMatrix<C64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        let n = self.nrows();
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for c in 0..n {
            let xc = x[c];
            if xc == C64::new(0.0, 0.0) {
                continue;
            }
            let col = self.column(c);
            for (yr, m) in y.iter_mut().zip(col.iter()) {
                *yr += m * xc;
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        (0..self.ncols())
            .map(|c| self.column(c).iter().map(|v| v.norm()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

/// A weighted sum of sparse matrices applied without materializing it.
///
/// Used for time-dependent Hamiltonians `H(t) = H₀ + c(t) A + c*(t) A†`,
/// where only the scalar coefficients change between steps.
#[derive(Clone, Debug)]
pub struct SparseSum<'a> {
    terms: Vec<(C64, &'a SparseMatrix)>,
    dim: usize,
}

impl<'a> SparseSum<'a> {
    pub fn new(terms: Vec<(C64, &'a SparseMatrix)>) -> Self {
        let dim = terms.first().map(|(_, m)| m.dim()).unwrap_or(0);
        assert!(terms.iter().all(|(_, m)| m.dim() == dim), "dimension mismatch in SparseSum");
        Self { terms, dim }
    }
}

impl LinearAction for SparseSum<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, x: &[C64], y: &mut [C64]) {
        y.iter_mut().for_each(|v| *v = C64::new(0.0, 0.0));
        for (c, m) in &self.terms {
            if *c != C64::new(0.0, 0.0) {
                m.apply_acc(*c, x, y);
            }
        }
    }

    fn norm_bound(&self) -> f64 {
        self.terms.iter().map(|(c, m)| c.norm() * m.norm_one()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn triplets_sum_duplicates_and_drop_zeros() {
        let m = SparseMatrix::from_triplets(2, vec![(0, 1, c(1.0)), (0, 1, c(2.0)), (1, 0, c(0.0))]);
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.to_dense()[(0, 1)], c(3.0));
    }

    #[test]
    fn kron_matches_dense_definition() {
        let a = DMatrix::from_fn(2, 2, |i, j| C64::new((i + 2 * j) as f64, i as f64));
        let b = DMatrix::from_fn(3, 3, |i, j| C64::new(1.0 + i as f64 - j as f64, 0.5));
        let s = SparseMatrix::kron(&a, &b).to_dense();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..3 {
                    for l in 0..3 {
                        assert_eq!(s[(i * 3 + k, j * 3 + l)], a[(i, j)] * b[(k, l)]);
                    }
                }
            }
        }
    }

    #[test]
    fn dense_products_agree() {
        let a = DMatrix::from_fn(4, 4, |i, j| C64::new(((i * 7 + j * 3) % 5) as f64 - 2.0, (i as f64 - j as f64) * 0.3));
        let rho = DMatrix::from_fn(4, 4, |i, j| C64::new((i + j) as f64, i as f64 * 0.1 - j as f64));
        let s = SparseMatrix::from_dense(&a, 0.0);
        assert!((s.mul_dense(&rho) - &a * &rho).norm() < 1e-12);
        assert!((s.dense_mul(&rho) - &rho * &a).norm() < 1e-12);
        assert!((s.matmul(&s).to_dense() - &a * &a).norm() < 1e-12);
    }
}
