//! Dense linear algebra over truncated bosonic Fock spaces.
//!
//! Composite states use the ordering `|n_c, n_m⟩ ↦ n_c * mech_dim + n_m`, so
//! cavity operators embed as `A ⊗ I` and phonon operators as `I ⊗ B`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::{expm_action, KrylovOptions};
use crate::sparse::SparseMatrix;

/// Relative tolerance on `max|M − M†|` for Hermitian inputs.
pub const HERMITIAN_TOL: f64 = 1e-10;
/// Population in the top two Fock levels above which results are flagged.
pub const LEAKAGE_THRESHOLD: f64 = 1e-6;
/// Tolerance used when validating state normalization.
pub const STATE_TOL: f64 = 1e-8;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Truncation of the photon and phonon modes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FockSpace {
    pub cavity_dim: usize,
    pub mech_dim: usize,
}

impl FockSpace {
    pub fn new(cavity_dim: usize, mech_dim: usize) -> Result<Self> {
        if cavity_dim == 0 || mech_dim == 0 {
            return Err(Error::InvalidDimension(format!(
                "cavity_dim = {cavity_dim}, mech_dim = {mech_dim}; both must be at least 1"
            )));
        }
        Ok(Self { cavity_dim, mech_dim })
    }

    pub fn dim(&self) -> usize {
        self.cavity_dim * self.mech_dim
    }

    pub fn index(&self, n_c: usize, n_m: usize) -> usize {
        n_c * self.mech_dim + n_m
    }
}

/// Which Hilbert space an operator or state lives on.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Space {
    Cavity(usize),
    Mech(usize),
    Composite(FockSpace),
}

impl Space {
    pub fn dim(&self) -> usize {
        match *self {
            Space::Cavity(d) | Space::Mech(d) => d,
            Space::Composite(fs) => fs.dim(),
        }
    }
}

/// Standard ladder operator with `M[n−1, n] = √n`.
pub fn annihilation(dim: usize) -> Result<DMatrix<C64>> {
    if dim == 0 {
        return Err(Error::InvalidDimension("ladder operator needs dim >= 1".into()));
    }
    Ok(DMatrix::from_fn(dim, dim, |i, j| if j == i + 1 { C64::new((j as f64).sqrt(), 0.0) } else { ZERO }))
}

/// Diagonal number operator `diag(0, 1, …, dim−1)`.
pub fn number(dim: usize) -> DMatrix<C64> {
    DMatrix::from_diagonal(&DVector::from_fn(dim, |i, _| C64::new(i as f64, 0.0)))
}

/// A square matrix tagged with the space it acts on.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    space: Space,
    matrix: DMatrix<C64>,
}

impl Operator {
    pub fn new(space: Space, matrix: DMatrix<C64>) -> Result<Self> {
        let d = space.dim();
        if matrix.nrows() != d || matrix.ncols() != d {
            return Err(Error::SpaceMismatch(format!(
                "{}x{} matrix for space of dim {d}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        Ok(Self { space, matrix })
    }

    pub fn cavity(matrix: DMatrix<C64>) -> Self {
        let d = matrix.nrows();
        Self::new(Space::Cavity(d), matrix).expect("square cavity matrix")
    }

    pub fn mech(matrix: DMatrix<C64>) -> Self {
        let d = matrix.nrows();
        Self::new(Space::Mech(d), matrix).expect("square phonon matrix")
    }

    pub fn zeros(space: Space) -> Self {
        let d = space.dim();
        Self { space, matrix: DMatrix::zeros(d, d) }
    }

    pub fn identity(space: Space) -> Self {
        let d = space.dim();
        Self { space, matrix: DMatrix::identity(d, d) }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.matrix
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.matrix
    }

    pub fn dagger(&self) -> Self {
        Self { space: self.space, matrix: self.matrix.adjoint() }
    }

    pub fn scale(&self, s: C64) -> Self {
        Self { space: self.space, matrix: &self.matrix * s }
    }

    /// `max|M − M†|` relative to `max(1, max|M|)`.
    pub fn hermiticity_residual(&self) -> f64 {
        let d = self.matrix.nrows();
        let mut worst: f64 = 0.0;
        let mut scale: f64 = 1.0;
        for i in 0..d {
            for j in 0..d {
                scale = scale.max(self.matrix[(i, j)].norm());
                worst = worst.max((self.matrix[(i, j)] - self.matrix[(j, i)].conj()).norm());
            }
        }
        worst / scale
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermiticity_residual() < HERMITIAN_TOL
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        SparseMatrix::from_dense(&self.matrix, 0.0)
    }

    pub fn commutator(&self, other: &Operator) -> Operator {
        self * other - other * self
    }

    fn check_same(&self, other: &Operator, what: &str) {
        assert_eq!(self.space, other.space, "operator {what} across different spaces");
    }
}

impl std::ops::Add<&Operator> for &Operator {
    type Output = Operator;
    fn add(self, rhs: &Operator) -> Operator {
        self.check_same(rhs, "sum");
        Operator { space: self.space, matrix: &self.matrix + &rhs.matrix }
    }
}

impl std::ops::Add<Operator> for Operator {
    type Output = Operator;
    fn add(self, rhs: Operator) -> Operator {
        &self + &rhs
    }
}

impl std::ops::Sub<&Operator> for &Operator {
    type Output = Operator;
    fn sub(self, rhs: &Operator) -> Operator {
        self.check_same(rhs, "difference");
        Operator { space: self.space, matrix: &self.matrix - &rhs.matrix }
    }
}

impl std::ops::Sub<Operator> for Operator {
    type Output = Operator;
    fn sub(self, rhs: Operator) -> Operator {
        &self - &rhs
    }
}

impl std::ops::Mul<&Operator> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: &Operator) -> Operator {
        self.check_same(rhs, "product");
        Operator { space: self.space, matrix: &self.matrix * &rhs.matrix }
    }
}

impl std::ops::Mul<Operator> for Operator {
    type Output = Operator;
    fn mul(self, rhs: Operator) -> Operator {
        &self * &rhs
    }
}

impl std::ops::Mul<C64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: C64) -> Operator {
        self.scale(rhs)
    }
}

impl std::ops::Mul<f64> for &Operator {
    type Output = Operator;
    fn mul(self, rhs: f64) -> Operator {
        self.scale(C64::new(rhs, 0.0))
    }
}

/// Kronecker product of a cavity operator with a phonon operator.
pub fn tensor(cavity: &Operator, mech: &Operator) -> Result<Operator> {
    match (cavity.space, mech.space) {
        (Space::Cavity(dc), Space::Mech(dm)) => {
            let fs = FockSpace::new(dc, dm)?;
            Ok(Operator { space: Space::Composite(fs), matrix: cavity.matrix.kronecker(&mech.matrix) })
        }
        (a, b) => Err(Error::SpaceMismatch(format!("tensor expects (cavity, mech), got ({a:?}, {b:?})"))),
    }
}

/// `A ⊗ I` on the composite space.
pub fn embed_cavity(cavity: &Operator, mech_dim: usize) -> Result<Operator> {
    tensor(cavity, &Operator::identity(Space::Mech(mech_dim)))
}

/// `I ⊗ B` on the composite space.
pub fn embed_mech(cavity_dim: usize, mech: &Operator) -> Result<Operator> {
    tensor(&Operator::identity(Space::Cavity(cavity_dim)), mech)
}

/// `exp(−iHt) v` for Hermitian `H`, acting on the vector only.
pub fn expm_apply(h: &Operator, v: &DVector<C64>, t: f64) -> Result<DVector<C64>> {
    let res = h.hermiticity_residual();
    if res >= HERMITIAN_TOL {
        return Err(Error::NumericalContract(format!("generator is not Hermitian (residual {res:.3e})")));
    }
    expm_action(&h.to_sparse(), v, t, KrylovOptions::default())
}

/// State representation.
#[derive(Clone, Debug, PartialEq)]
pub enum StateData {
    Pure(DVector<C64>),
    Mixed(DMatrix<C64>),
}

/// A normalized pure or mixed state on a tagged space.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumState {
    space: Space,
    data: StateData,
}

impl QuantumState {
    /// Pure state; the vector must be normalized to within [`STATE_TOL`].
    pub fn pure(space: Space, v: DVector<C64>) -> Result<Self> {
        if v.len() != space.dim() {
            return Err(Error::SpaceMismatch(format!("vector of length {} for dim {}", v.len(), space.dim())));
        }
        let n = v.norm();
        if (n - 1.0).abs() > STATE_TOL {
            return Err(Error::NumericalContract(format!("state norm {n} differs from 1")));
        }
        Ok(Self { space, data: StateData::Pure(v) })
    }

    /// Pure state from an arbitrary nonzero vector.
    pub fn pure_normalized(space: Space, v: DVector<C64>) -> Result<Self> {
        let n = v.norm();
        if n == 0.0 {
            return Err(Error::NumericalContract("cannot normalize the zero vector".into()));
        }
        Self::pure(space, v / C64::new(n, 0.0))
    }

    /// Density matrix; checks unit trace, hermiticity and positivity.
    pub fn mixed(space: Space, rho: DMatrix<C64>) -> Result<Self> {
        let d = space.dim();
        if rho.nrows() != d || rho.ncols() != d {
            return Err(Error::SpaceMismatch(format!("{}x{} density matrix for dim {d}", rho.nrows(), rho.ncols())));
        }
        let tr = rho.trace();
        if (tr.re - 1.0).abs() > STATE_TOL || tr.im.abs() > STATE_TOL {
            return Err(Error::NumericalContract(format!("density matrix trace {tr}")));
        }
        let op = Operator { space, matrix: rho };
        if op.hermiticity_residual() > STATE_TOL {
            return Err(Error::NumericalContract("density matrix is not Hermitian".into()));
        }
        let min_eig = min_eigenvalue(&op.matrix);
        if min_eig < -STATE_TOL {
            return Err(Error::NumericalContract(format!("density matrix has eigenvalue {min_eig:.3e}")));
        }
        Ok(Self { space, data: StateData::Mixed(op.matrix) })
    }

    /// Density matrix accepted without the positivity check (used for
    /// integrator outputs whose positivity is monitored separately).
    pub(crate) fn mixed_unchecked(space: Space, rho: DMatrix<C64>) -> Self {
        Self { space, data: StateData::Mixed(rho) }
    }

    /// Fock basis state `|n⟩` on a single-mode space.
    pub fn fock(space: Space, n: usize) -> Result<Self> {
        let d = space.dim();
        if n >= d {
            return Err(Error::InvalidDimension(format!("Fock level {n} outside dim {d}")));
        }
        let mut v = DVector::zeros(d);
        v[n] = ONE;
        Self::pure(space, v)
    }

    /// Product basis state `|n_c⟩ ⊗ |n_m⟩`.
    pub fn product_fock(space: FockSpace, n_c: usize, n_m: usize) -> Result<Self> {
        if n_c >= space.cavity_dim || n_m >= space.mech_dim {
            return Err(Error::InvalidDimension(format!("|{n_c},{n_m}⟩ outside {space:?}")));
        }
        let mut v = DVector::zeros(space.dim());
        v[space.index(n_c, n_m)] = ONE;
        Self::pure(Space::Composite(space), v)
    }

    /// `ρ_c ⊗ ρ_m` from a cavity state and a phonon state.
    pub fn product(cavity: &QuantumState, mech: &QuantumState) -> Result<Self> {
        let (dc, dm) = match (cavity.space, mech.space) {
            (Space::Cavity(dc), Space::Mech(dm)) => (dc, dm),
            (a, b) => return Err(Error::SpaceMismatch(format!("product expects (cavity, mech), got ({a:?}, {b:?})"))),
        };
        let space = Space::Composite(FockSpace::new(dc, dm)?);
        match (&cavity.data, &mech.data) {
            (StateData::Pure(a), StateData::Pure(b)) => Ok(Self { space, data: StateData::Pure(a.kronecker(b)) }),
            _ => Ok(Self { space, data: StateData::Mixed(cavity.density().kronecker(&mech.density())) }),
        }
    }

    pub fn space(&self) -> Space {
        self.space
    }

    pub fn data(&self) -> &StateData {
        &self.data
    }

    pub fn is_pure(&self) -> bool {
        matches!(self.data, StateData::Pure(_))
    }

    pub fn as_vector(&self) -> Option<&DVector<C64>> {
        match &self.data {
            StateData::Pure(v) => Some(v),
            StateData::Mixed(_) => None,
        }
    }

    /// The density matrix (pure states are promoted).
    pub fn density(&self) -> DMatrix<C64> {
        match &self.data {
            StateData::Pure(v) => v * v.adjoint(),
            StateData::Mixed(m) => m.clone(),
        }
    }

    pub fn trace(&self) -> f64 {
        match &self.data {
            StateData::Pure(v) => v.norm_squared(),
            StateData::Mixed(m) => m.trace().re,
        }
    }

    /// Diagonal of the density matrix.
    pub fn populations(&self) -> Vec<f64> {
        match &self.data {
            StateData::Pure(v) => v.iter().map(|c| c.norm_sqr()).collect(),
            StateData::Mixed(m) => (0..m.nrows()).map(|i| m[(i, i)].re).collect(),
        }
    }

    /// `U ρ U†` (or `U v`) for a unitary on the same space.
    pub fn transform(&self, u: &DMatrix<C64>) -> Result<Self> {
        if u.nrows() != self.space.dim() {
            return Err(Error::SpaceMismatch("unitary dimension differs from state".into()));
        }
        Ok(match &self.data {
            StateData::Pure(v) => Self { space: self.space, data: StateData::Pure(u * v) },
            StateData::Mixed(m) => Self { space: self.space, data: StateData::Mixed(u * m * u.adjoint()) },
        })
    }
}

fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    let eig = SymmetricEigen::new(m.clone());
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Cavity populations of a composite state without forming the full
/// reduced matrix.
pub fn cavity_populations(state: &QuantumState) -> Result<Vec<f64>> {
    let fs = match state.space {
        Space::Composite(fs) => fs,
        Space::Cavity(_) => return Ok(state.populations()),
        s => return Err(Error::SpaceMismatch(format!("cavity populations of {s:?}"))),
    };
    let pops = state.populations();
    Ok((0..fs.cavity_dim).map(|n| (0..fs.mech_dim).map(|m| pops[fs.index(n, m)]).sum()).collect())
}

/// Phonon populations of a composite state.
pub fn mech_populations(state: &QuantumState) -> Result<Vec<f64>> {
    let fs = match state.space {
        Space::Composite(fs) => fs,
        Space::Mech(_) => return Ok(state.populations()),
        s => return Err(Error::SpaceMismatch(format!("phonon populations of {s:?}"))),
    };
    let pops = state.populations();
    Ok((0..fs.mech_dim).map(|m| (0..fs.cavity_dim).map(|n| pops[fs.index(n, m)]).sum()).collect())
}

/// `Tr_M ρ`, the reduced cavity state.
pub fn partial_trace_mech(state: &QuantumState) -> Result<QuantumState> {
    let fs = match state.space {
        Space::Composite(fs) => fs,
        s => return Err(Error::SpaceMismatch(format!("partial trace needs a composite state, got {s:?}"))),
    };
    let (dc, dm) = (fs.cavity_dim, fs.mech_dim);
    let mut out = DMatrix::<C64>::zeros(dc, dc);
    match &state.data {
        StateData::Pure(v) => {
            // ρ_c = Ψ Ψ† with Ψ[n, m] = ψ_{n,m}
            let psi = DMatrix::from_fn(dc, dm, |n, m| v[fs.index(n, m)]);
            out = &psi * psi.adjoint();
        }
        StateData::Mixed(rho) => {
            for i in 0..dc {
                for j in 0..dc {
                    let mut acc = ZERO;
                    for m in 0..dm {
                        acc += rho[(fs.index(i, m), fs.index(j, m))];
                    }
                    out[(i, j)] = acc;
                }
            }
        }
    }
    Ok(QuantumState::mixed_unchecked(Space::Cavity(dc), out))
}

/// `Tr_C ρ`, the reduced phonon state.
pub fn partial_trace_cavity(state: &QuantumState) -> Result<QuantumState> {
    let fs = match state.space {
        Space::Composite(fs) => fs,
        s => return Err(Error::SpaceMismatch(format!("partial trace needs a composite state, got {s:?}"))),
    };
    let (dc, dm) = (fs.cavity_dim, fs.mech_dim);
    let rho = state.density();
    let out = DMatrix::from_fn(dm, dm, |i, j| (0..dc).map(|n| rho[(fs.index(n, i), fs.index(n, j))]).sum());
    Ok(QuantumState::mixed_unchecked(Space::Mech(dm), out))
}

/// Hermitian square root with eigenvalues clamped at zero.
fn psd_sqrt(m: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    let eig = SymmetricEigen::new(m.clone());
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -STATE_TOL {
        return Err(Error::NumericalContract(format!("negative eigenvalue {min:.3e} in fidelity argument")));
    }
    let q = &eig.eigenvectors;
    let s = DMatrix::from_diagonal(&DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|&l| C64::new(l.max(0.0).sqrt(), 0.0)),
    ));
    Ok(q * s * q.adjoint())
}

/// Uhlmann fidelity `Tr√(√σ ρ √σ)`; reduces to `√⟨Ψ|ρ|Ψ⟩` when either
/// argument is pure.
pub fn fidelity(rho: &QuantumState, sigma: &QuantumState) -> Result<f64> {
    if rho.space != sigma.space {
        return Err(Error::SpaceMismatch(format!("fidelity between {:?} and {:?}", rho.space, sigma.space)));
    }
    let f = match (&rho.data, &sigma.data) {
        (StateData::Pure(a), StateData::Pure(b)) => a.dotc(b).norm(),
        (StateData::Mixed(m), StateData::Pure(v)) | (StateData::Pure(v), StateData::Mixed(m)) => {
            let ev = v.dotc(&(m * v)).re;
            if ev < -STATE_TOL {
                return Err(Error::NumericalContract(format!("negative expectation {ev:.3e} in fidelity")));
            }
            ev.max(0.0).sqrt()
        }
        (StateData::Mixed(r), StateData::Mixed(s)) => {
            let sq = psd_sqrt(s)?;
            let inner = &sq * r * &sq;
            let inner = (&inner + inner.adjoint()) * C64::new(0.5, 0.0);
            let eig = SymmetricEigen::new(inner);
            let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
            if min < -STATE_TOL {
                return Err(Error::NumericalContract(format!("negative eigenvalue {min:.3e} in fidelity")));
            }
            eig.eigenvalues.iter().map(|&l| l.max(0.0).sqrt()).sum()
        }
    };
    Ok(f.clamp(0.0, 1.0))
}

/// A truncated thermal state together with the probability mass lost to
/// truncation before renormalization.
#[derive(Clone, Debug)]
pub struct ThermalState {
    pub state: QuantumState,
    pub truncation_deficit: f64,
}

/// Bose–Einstein phonon state with `p_n ∝ (n̄/(1+n̄))ⁿ`, renormalized on the
/// retained levels.
pub fn thermal_state(n_bar: f64, dim: usize) -> Result<ThermalState> {
    if !(n_bar >= 0.0) || !n_bar.is_finite() {
        return Err(Error::InvalidParameter(format!("thermal occupation {n_bar} must be >= 0")));
    }
    if dim == 0 {
        return Err(Error::InvalidDimension("thermal state needs dim >= 1".into()));
    }
    let ratio = n_bar / (1.0 + n_bar);
    let raw: Vec<f64> = (0..dim).map(|n| ratio.powi(n as i32) / (1.0 + n_bar)).collect();
    let total: f64 = raw.iter().sum();
    let deficit = 1.0 - total;
    if deficit > 1e-6 {
        log::warn!("thermal state n̄={n_bar} truncated at dim {dim}: deficit {deficit:.3e}");
    }
    let rho = DMatrix::from_diagonal(&DVector::from_iterator(dim, raw.iter().map(|p| C64::new(p / total, 0.0))));
    Ok(ThermalState {
        state: QuantumState::mixed_unchecked(Space::Mech(dim), rho),
        truncation_deficit: deficit.max(0.0),
    })
}

/// Largest population held in the top two Fock levels of each mode.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Leakage {
    pub cavity_top: f64,
    pub mech_top: f64,
}

impl Leakage {
    pub fn of(state: &QuantumState) -> Result<Self> {
        let top2 = |p: &[f64]| p.iter().rev().take(2).sum::<f64>();
        match state.space {
            Space::Composite(_) => Ok(Self {
                cavity_top: top2(&cavity_populations(state)?),
                mech_top: top2(&mech_populations(state)?),
            }),
            Space::Cavity(_) => Ok(Self { cavity_top: top2(&state.populations()), mech_top: 0.0 }),
            Space::Mech(_) => Ok(Self { cavity_top: 0.0, mech_top: top2(&state.populations()) }),
        }
    }

    pub fn max(self, other: Self) -> Self {
        Self { cavity_top: self.cavity_top.max(other.cavity_top), mech_top: self.mech_top.max(other.mech_top) }
    }

    pub fn flagged(&self) -> bool {
        self.cavity_top > LEAKAGE_THRESHOLD || self.mech_top > LEAKAGE_THRESHOLD
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn ladder_entries() {
        let a = annihilation(3).unwrap();
        assert_eq!(a[(0, 1)], c(1.0));
        assert_abs_diff_eq!(a[(1, 2)].re, 2f64.sqrt(), epsilon = 1e-15);
        assert_eq!(a.iter().filter(|v| **v != ZERO).count(), 2);
        assert_eq!(annihilation(1).unwrap(), DMatrix::zeros(1, 1));
        assert!(matches!(annihilation(0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn number_operator_from_ladder() {
        let a = annihilation(4).unwrap();
        let n = a.adjoint() * &a;
        for i in 0..4 {
            assert_abs_diff_eq!(n[(i, i)].re, i as f64, epsilon = 1e-14);
        }
    }

    #[test]
    fn canonical_commutator_away_from_truncation_edge() {
        let d = 7;
        let a = annihilation(d).unwrap();
        let comm = &a * a.adjoint() - a.adjoint() * &a;
        for i in 0..d {
            for j in 0..d {
                let expected = if i == j && i < d - 1 { 1.0 } else if i == j { -((d - 1) as f64) } else { 0.0 };
                assert_abs_diff_eq!(comm[(i, j)].re, expected, epsilon = 1e-12);
                assert_abs_diff_eq!(comm[(i, j)].im, 0.0, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn tensor_of_identities_and_number() {
        let i2 = Operator::identity(Space::Cavity(2));
        let i3 = Operator::identity(Space::Mech(3));
        assert_eq!(tensor(&i2, &i3).unwrap().matrix(), &DMatrix::<C64>::identity(6, 6));

        let nc = Operator::cavity(number(2));
        let t = embed_cavity(&nc, 2).unwrap();
        let diag: Vec<f64> = (0..4).map(|i| t.matrix()[(i, i)].re).collect();
        assert_eq!(diag, vec![0.0, 0.0, 1.0, 1.0]);

        assert!(matches!(tensor(&i3, &i2), Err(Error::SpaceMismatch(_))));
    }

    #[test]
    fn kronecker_product_factorizes() {
        let a = Operator::cavity(annihilation(3).unwrap());
        let b = Operator::mech(annihilation(3).unwrap());
        let lhs = embed_cavity(&a, 3).unwrap() * embed_mech(3, &b).unwrap();
        let rhs = tensor(&a, &b).unwrap();
        // brute-force Kronecker product oracle
        let mut brute = DMatrix::<C64>::zeros(9, 9);
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        brute[(3 * i + k, 3 * j + l)] = a.matrix()[(i, j)] * b.matrix()[(k, l)];
                    }
                }
            }
        }
        assert!((lhs.matrix() - rhs.matrix()).norm() < 1e-14);
        assert!((rhs.matrix() - brute).norm() < 1e-14);
    }

    #[test]
    fn expm_apply_identity_and_eigenstate() {
        let z = Operator::zeros(Space::Cavity(3));
        let v = DVector::from_vec(vec![c(0.6), C64::new(0.0, 0.8), ZERO]);
        assert!((expm_apply(&z, &v, 2.0).unwrap() - &v).norm() < 1e-15);

        let n = Operator::cavity(number(3));
        let mut two = DVector::zeros(3);
        two[2] = ONE;
        let out = expm_apply(&n, &two, std::f64::consts::PI).unwrap();
        assert!((out - two).norm() < 1e-12);
    }

    #[test]
    fn expm_apply_rejects_non_hermitian() {
        let a = Operator::cavity(annihilation(3).unwrap());
        let v = DVector::from_element(3, c(1.0 / 3f64.sqrt()));
        assert!(matches!(expm_apply(&a, &v, 1.0), Err(Error::NumericalContract(_))));
    }

    #[test]
    fn expm_apply_matches_dense_eigendecomposition() {
        let a = Operator::cavity(annihilation(40).unwrap());
        let h = &a + &a.dagger();
        let v = DVector::from_fn(40, |i, _| C64::new((-(i as f64) / 3.0).exp(), 0.1 * i as f64));
        let v = &v / c(v.norm());
        // oracle: independent dense eigendecomposition
        let eig = SymmetricEigen::new(h.matrix().clone());
        let q = &eig.eigenvectors;
        let coeffs = q.adjoint() * &v;
        let evolved = DVector::from_fn(40, |i, _| coeffs[i] * C64::from_polar(1.0, -eig.eigenvalues[i] * 0.1));
        let exact = q * evolved;
        let got = expm_apply(&h, &v, 0.1).unwrap();
        assert!((got - exact).norm() < 1e-8);
    }

    #[test]
    fn partial_trace_examples() {
        let fs = FockSpace::new(3, 2).unwrap();
        let s = QuantumState::product_fock(fs, 2, 0).unwrap();
        let r = partial_trace_mech(&s).unwrap().density();
        assert_abs_diff_eq!(r[(2, 2)].re, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(r.norm(), 1.0, epsilon = 1e-14);

        let fs = FockSpace::new(2, 2).unwrap();
        let mut v = DVector::zeros(4);
        v[fs.index(0, 0)] = c(0.5f64.sqrt());
        v[fs.index(1, 1)] = c(0.5f64.sqrt());
        let bell = QuantumState::pure(Space::Composite(fs), v).unwrap();
        let r = partial_trace_mech(&bell).unwrap().density();
        assert!((r - DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.5), c(0.5)]))).norm() < 1e-14);

        let cav = QuantumState::fock(Space::Cavity(2), 0).unwrap();
        assert!(matches!(partial_trace_mech(&cav), Err(Error::SpaceMismatch(_))));
    }

    #[test]
    fn fidelity_examples() {
        let s0 = QuantumState::fock(Space::Cavity(2), 0).unwrap();
        let s1 = QuantumState::fock(Space::Cavity(2), 1).unwrap();
        assert_abs_diff_eq!(fidelity(&s0, &s0).unwrap(), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(fidelity(&s0, &s1).unwrap(), 0.0, epsilon = 1e-14);

        let mixed = QuantumState::mixed(Space::Cavity(2), DMatrix::identity(2, 2) * c(0.5)).unwrap();
        let plus = QuantumState::pure(Space::Cavity(2), DVector::from_element(2, c(0.5f64.sqrt()))).unwrap();
        assert_abs_diff_eq!(fidelity(&mixed, &plus).unwrap(), 0.5f64.sqrt(), epsilon = 1e-14);
        // mixed-mixed route agrees with the pure route
        let plus_mixed = QuantumState::mixed(Space::Cavity(2), plus.density()).unwrap();
        assert_abs_diff_eq!(fidelity(&mixed, &plus_mixed).unwrap(), 0.5f64.sqrt(), epsilon = 1e-7);

        let other = QuantumState::fock(Space::Cavity(3), 0).unwrap();
        assert!(matches!(fidelity(&s0, &other), Err(Error::SpaceMismatch(_))));
    }

    #[test]
    fn thermal_examples() {
        let t0 = thermal_state(0.0, 5).unwrap();
        assert_abs_diff_eq!(t0.state.populations()[0], 1.0, epsilon = 1e-15);

        let t1 = thermal_state(1.0, 60).unwrap();
        let p = t1.state.populations();
        assert_abs_diff_eq!(p[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(p[1], 0.25, epsilon = 1e-12);

        let t = thermal_state(0.5, 15).unwrap();
        // direct-sum oracle for the geometric distribution
        let q: f64 = 0.5 / 1.5;
        let weights: Vec<f64> = (0..15).map(|n| q.powi(n)).collect();
        let z: f64 = weights.iter().sum();
        let mean_oracle: f64 = weights.iter().enumerate().map(|(n, w)| n as f64 * w / z).sum();
        let mean: f64 = t.state.populations().iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        assert_abs_diff_eq!(mean, mean_oracle, epsilon = 1e-14);
        assert!((mean - 0.5).abs() < 1e-4);

        assert!(matches!(thermal_state(-0.1, 4), Err(Error::InvalidParameter(_))));
        assert!(thermal_state(5.0, 4).unwrap().truncation_deficit > 1e-6);
    }

    #[test]
    fn invalid_states_are_rejected() {
        assert!(QuantumState::pure(Space::Cavity(2), DVector::from_element(2, ONE)).is_err());
        let not_psd = DMatrix::from_diagonal(&DVector::from_vec(vec![c(1.5), c(-0.5)]));
        assert!(QuantumState::mixed(Space::Cavity(2), not_psd).is_err());
        assert!(FockSpace::new(0, 3).is_err());
    }
}
