//! Lindblad generators for photon leakage and mechanical thermalization.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{annihilation, number, FockSpace, Operator, Space};
use crate::par::Execution;
use crate::sparse::SparseMatrix;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LindbladLabel {
    Optical,
    Mechanical,
    Custom,
}

/// One `rate · D[A]` term, with `A` cached in sparse form.
#[derive(Clone, Debug)]
pub struct JumpTerm {
    pub rate: f64,
    pub operator: Operator,
    sparse: SparseMatrix,
    sparse_dag: SparseMatrix,
    /// `A†A`.
    number: SparseMatrix,
}

impl JumpTerm {
    pub fn new(rate: f64, operator: Operator) -> Result<Self> {
        if !(rate >= 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!("jump rate {rate} must be non-negative")));
        }
        let sparse = operator.to_sparse();
        let sparse_dag = sparse.adjoint();
        let number = sparse_dag.matmul(&sparse);
        Ok(Self { rate, operator, sparse, sparse_dag, number })
    }

    /// `rate · (AρA† − ½{A†A, ρ})` for Hermitian `ρ`.
    fn apply_hermitian(&self, rho: &DMatrix<C64>, exec: Execution) -> DMatrix<C64> {
        // AρA† = A (Aρ)† and ρA†A = (A†A ρ)† when ρ = ρ†
        let a_rho = self.sparse.mul_dense_with(rho, exec);
        let sandwich = self.sparse.mul_dense_with(&a_rho.adjoint(), exec);
        let n_rho = self.number.mul_dense_with(rho, exec);
        let anti = &n_rho + n_rho.adjoint();
        (sandwich - anti * C64::new(0.5, 0.0)) * C64::new(self.rate, 0.0)
    }

    /// Upper bound on `‖rate · D[A]‖` in the induced 1-norm.
    fn norm_bound(&self) -> f64 {
        2.0 * self.rate * self.number.norm_one().max(self.sparse.norm_one() * self.sparse_dag.norm_one())
    }
}

/// A sum of dissipators.
#[derive(Clone, Debug)]
pub struct Lindbladian {
    pub label: LindbladLabel,
    pub jump_terms: Vec<JumpTerm>,
    space: Space,
}

impl Lindbladian {
    pub fn empty(space: Space) -> Self {
        Self { label: LindbladLabel::Custom, jump_terms: Vec::new(), space }
    }

    pub fn new(label: LindbladLabel, space: Space, terms: Vec<(f64, Operator)>) -> Result<Self> {
        let mut jump_terms = Vec::with_capacity(terms.len());
        for (rate, op) in terms {
            if op.space() != space {
                return Err(Error::SpaceMismatch(format!("jump operator on {:?}, generator on {space:?}", op.space())));
            }
            jump_terms.push(JumpTerm::new(rate, op)?);
        }
        Ok(Self { label, jump_terms, space })
    }

    pub fn space(&self) -> Space {
        self.space
    }

    /// True when every rate is zero (the generator vanishes).
    pub fn is_zero(&self) -> bool {
        self.jump_terms.iter().all(|t| t.rate == 0.0)
    }

    /// Concatenates the terms of two generators on the same space.
    pub fn combine(mut self, other: Lindbladian) -> Result<Self> {
        if self.space != other.space {
            return Err(Error::SpaceMismatch("cannot combine generators on different spaces".into()));
        }
        if self.label != other.label {
            self.label = LindbladLabel::Custom;
        }
        self.jump_terms.extend(other.jump_terms);
        Ok(self)
    }

    /// `Σ rate · D[A] ρ` for Hermitian `ρ`.
    pub fn apply(&self, rho: &DMatrix<C64>, exec: Execution) -> DMatrix<C64> {
        let mut out = DMatrix::zeros(rho.nrows(), rho.ncols());
        for t in self.jump_terms.iter().filter(|t| t.rate > 0.0) {
            out += t.apply_hermitian(rho, exec);
        }
        out
    }

    pub fn norm_bound(&self) -> f64 {
        self.jump_terms.iter().map(JumpTerm::norm_bound).sum()
    }

    /// Integrates `dρ/dt = Lρ` over `dt` with classical RK4, substepping so
    /// that each substep has `‖L‖ h ≤ 1/2`.
    pub fn evolve(&self, rho: &DMatrix<C64>, dt: f64, exec: Execution) -> DMatrix<C64> {
        if self.is_zero() || dt == 0.0 {
            return rho.clone();
        }
        let n = (2.0 * self.norm_bound() * dt.abs()).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        let mut r = rho.clone();
        for _ in 0..n {
            let k1 = self.apply(&r, exec);
            let k2 = self.apply(&(&r + &k1 * C64::new(h / 2.0, 0.0)), exec);
            let k3 = self.apply(&(&r + &k2 * C64::new(h / 2.0, 0.0)), exec);
            let k4 = self.apply(&(&r + &k3 * C64::new(h, 0.0)), exec);
            r += (k1 + k2 * C64::new(2.0, 0.0) + k3 * C64::new(2.0, 0.0) + k4) * C64::new(h / 6.0, 0.0);
            // keep exact hermiticity against roundoff
            r = (&r + r.adjoint()) * C64::new(0.5, 0.0);
        }
        r
    }
}

/// `D[A]ρ = AρA† − ½{A†A, ρ}` for dense inputs (no hermiticity
/// assumption).
pub fn dissipator_apply(a: &Operator, rho: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let d = a.space().dim();
    if rho.nrows() != d || rho.ncols() != d {
        return Err(Error::SpaceMismatch(format!("{}x{} matrix for operator of dim {d}", rho.nrows(), rho.ncols())));
    }
    let m = a.matrix();
    let ad = m.adjoint();
    let n = &ad * m;
    Ok(m * rho * &ad - (&n * rho + rho * &n) * C64::new(0.5, 0.0))
}

fn check_rate(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return Err(Error::InvalidParameter(format!("{name} = {v} must be non-negative")));
    }
    Ok(())
}

fn cavity_ladder(space: Space) -> Result<Operator> {
    match space {
        Space::Cavity(d) => Ok(Operator::cavity(annihilation(d)?)),
        Space::Composite(fs) => {
            let a = annihilation(fs.cavity_dim)?;
            Operator::new(space, a.kronecker(&DMatrix::identity(fs.mech_dim, fs.mech_dim)))
        }
        Space::Mech(_) => Err(Error::SpaceMismatch("photon loss needs a cavity mode".into())),
    }
}

/// `κ D[a]` on a cavity or composite space.
pub fn optical_loss(kappa: f64, space: Space) -> Result<Lindbladian> {
    check_rate("kappa", kappa)?;
    Lindbladian::new(LindbladLabel::Optical, space, vec![(kappa, cavity_ladder(space)?)])
}

/// Coefficient of the photon-number dephasing term, `4γk²/log(1 + 1/n̄)`,
/// taken as 0 at `n̄ = 0`.
pub fn dephasing_rate(gamma: f64, n_bar: f64, k: f64) -> f64 {
    if n_bar == 0.0 {
        0.0
    } else {
        4.0 * gamma * k * k / (1.0 + 1.0 / n_bar).ln()
    }
}

/// `γ(n̄+1) D[b − k n_c] + γ n̄ D[b† − k n_c] + (4γk²/log(1+1/n̄)) D[n_c]`.
pub fn mechanical_thermalization(gamma: f64, n_bar: f64, k: f64, space: FockSpace) -> Result<Lindbladian> {
    check_rate("gamma", gamma)?;
    check_rate("n_bar", n_bar)?;
    check_rate("k", k)?;
    let (dc, dm) = (space.cavity_dim, space.mech_dim);
    let n_c = number(dc).kronecker(&DMatrix::identity(dm, dm));
    let b = DMatrix::identity(dc, dc).kronecker(&annihilation(dm)?);
    let shift = &n_c * C64::new(k, 0.0);
    let tag = Space::Composite(space);
    let lower = Operator::new(tag, &b - &shift)?;
    let raise = Operator::new(tag, b.adjoint() - &shift)?;
    Lindbladian::new(
        LindbladLabel::Mechanical,
        tag,
        vec![
            (gamma * (n_bar + 1.0), lower),
            (gamma * n_bar, raise),
            (dephasing_rate(gamma, n_bar, k), Operator::new(tag, n_c)?),
        ],
    )
}
