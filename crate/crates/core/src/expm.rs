//! Unitary propagation kernels: `exp(−iHt)` acting on vectors (Lanczos),
//! on dense blocks (Taylor), and as a full dense matrix (eigendecomposition).

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;

use crate::error::{Error, Result};
use crate::sparse::{LinearAction, SparseMatrix};

/// Lanczos controls.
#[derive(Clone, Copy, Debug)]
pub struct KrylovOptions {
    pub max_dim: usize,
    /// Local error target per call, relative to the vector norm.
    pub tol: f64,
}

impl Default for KrylovOptions {
    fn default() -> Self {
        Self { max_dim: 40, tol: 1e-13 }
    }
}

/// Computes `exp(−i H t) v` for Hermitian `H` given only its action.
///
/// Builds an orthonormal Krylov basis with full reorthogonalization, so the
/// result is unitary in that subspace and the norm of `v` is preserved to
/// roundoff. Long times are split into substeps chosen from the a-posteriori
/// Lanczos error estimate; a single basis is reused for all trial step sizes.
pub fn expm_action<A: LinearAction + ?Sized>(
    op: &A,
    v: &DVector<C64>,
    t: f64,
    opts: KrylovOptions,
) -> Result<DVector<C64>> {
    let n = op.dim();
    if v.len() != n {
        return Err(Error::SpaceMismatch(format!("vector of length {} for operator of dim {n}", v.len())));
    }
    let norm0 = v.norm();
    if norm0 == 0.0 || t == 0.0 {
        return Ok(v.clone());
    }
    let mut w = v / C64::new(norm0, 0.0);
    let mut remaining = t.abs();
    let sign = t.signum();
    let max_dim = opts.max_dim.min(n).max(1);
    let checkpoints: Vec<usize> = (1..=max_dim).filter(|j| j % 8 == 0 || *j == max_dim).collect();

    let mut basis: Vec<DVector<C64>> = Vec::with_capacity(max_dim + 1);
    let mut scratch = DVector::<C64>::zeros(n);
    let mut guard = 0usize;
    while remaining > 0.0 {
        guard += 1;
        if guard > 100_000 {
            return Err(Error::Accuracy("Lanczos substepping did not terminate".into()));
        }
        basis.clear();
        basis.push(w.clone());
        let mut alpha: Vec<f64> = Vec::with_capacity(max_dim);
        let mut beta: Vec<f64> = Vec::with_capacity(max_dim);
        let mut step: Option<(f64, DVector<C64>)> = None;

        for j in 0..max_dim {
            op.apply(basis[j].as_slice(), scratch.as_mut_slice());
            let a = basis[j].dotc(&scratch).re;
            alpha.push(a);
            let mut r = scratch.clone();
            for q in basis.iter() {
                let proj = q.dotc(&r);
                r.axpy(-proj, q, C64::new(1.0, 0.0));
            }
            for q in basis.iter() {
                let proj = q.dotc(&r);
                r.axpy(-proj, q, C64::new(1.0, 0.0));
            }
            let b = r.norm();
            let m = j + 1;
            let breakdown = b <= 1e-13 * (a.abs() + beta.last().copied().unwrap_or(0.0)).max(1e-300);
            if breakdown || checkpoints.contains(&m) {
                let (evals, evecs) = tridiagonal_eigen(&alpha, &beta);
                let try_tau = |tau: f64| -> (f64, Vec<C64>) {
                    let y = expm_tridiag_e1(&evals, &evecs, sign * tau);
                    let err = if breakdown { 0.0 } else { b * y[m - 1].norm() };
                    (err, y)
                };
                let mut tau = remaining;
                let (mut err, mut y) = try_tau(tau);
                let last = breakdown || m == max_dim;
                if err > opts.tol && last {
                    while err > opts.tol {
                        tau *= 0.5;
                        let r2 = try_tau(tau);
                        err = r2.0;
                        y = r2.1;
                        if tau < 1e-14 * t.abs() {
                            return Err(Error::Accuracy("Lanczos step size underflow".into()));
                        }
                    }
                }
                if err <= opts.tol {
                    let mut out = DVector::<C64>::zeros(n);
                    for (q, c) in basis.iter().zip(y.iter()) {
                        out.axpy(*c, q, C64::new(1.0, 0.0));
                    }
                    step = Some((tau, out));
                    break;
                }
            }
            if breakdown {
                break;
            }
            beta.push(b);
            basis.push(r / C64::new(b, 0.0));
        }
        let (tau, out) = step.ok_or_else(|| Error::Accuracy("Lanczos failed to converge".into()))?;
        // renormalize against roundoff drift
        let nrm = out.norm();
        w = out / C64::new(nrm, 0.0);
        remaining -= tau;
        if remaining < 1e-15 * t.abs() {
            remaining = 0.0;
        }
    }
    Ok(w * C64::new(norm0, 0.0))
}

fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> (Vec<f64>, DMatrix<f64>) {
    let m = alpha.len();
    let mut t = DMatrix::<f64>::zeros(m, m);
    for i in 0..m {
        t[(i, i)] = alpha[i];
        if i + 1 < m {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t);
    (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
}

fn expm_tridiag_e1(evals: &[f64], evecs: &DMatrix<f64>, t: f64) -> Vec<C64> {
    let m = evals.len();
    (0..m)
        .map(|i| {
            (0..m)
                .map(|k| C64::from_polar(1.0, -evals[k] * t) * evecs[(i, k)] * evecs[(0, k)])
                .sum()
        })
        .collect()
}

/// Dense `exp(−i H t)` for Hermitian `H` via eigendecomposition.
pub fn expm_hermitian(h: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let eig = SymmetricEigen::new(h.clone());
    let q = &eig.eigenvectors;
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l * t)),
    ));
    q * phases * q.adjoint()
}

/// `exp(−i H t) ρ` for a dense block `ρ` by a truncated Taylor series with
/// norm-based substepping.
pub fn taylor_expm_left(h: &SparseMatrix, rho: &DMatrix<C64>, t: f64) -> DMatrix<C64> {
    let norm = h.norm_one() * t.abs();
    let substeps = (norm / 0.5).ceil().max(1.0) as usize;
    let dt = t / substeps as f64;
    let coeff = C64::new(0.0, -dt);
    let mut out = rho.clone();
    for _ in 0..substeps {
        let scale = out.norm().max(1e-300);
        let mut term = out.clone();
        let mut acc = out.clone();
        for j in 1..=30 {
            term = h.mul_dense(&term) * (coeff / j as f64);
            acc += &term;
            if term.norm() < 1e-17 * scale {
                break;
            }
        }
        out = acc;
    }
    out
}
