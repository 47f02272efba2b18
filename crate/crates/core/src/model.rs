//! Hamiltonians and closed-form operators of the driven optomechanical cavity.
//!
//! Frequencies are in units of ω_m, so the mechanical period is [`PERIOD`].
//! The default frame rotates with the cavity (`e^{−iω_c n_c t}` removed), in
//! which the drive reads `c(t) = 2iη e^{iψ} cos 2t`.

use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expm::expm_hermitian;
use crate::fock::{annihilation, number, FockSpace, Operator, Space};
use crate::sparse::SparseMatrix;

/// Mechanical period `T = 2π/ω_m`.
pub const PERIOD: f64 = 2.0 * PI;
/// Mechanical periods per protocol block.
pub const BLOCK_PERIODS: f64 = 5.0;
/// Cubic phonon coefficient `y = 16√6/27`.
pub const Y_COEFF: f64 = 16.0 * 2.449_489_742_783_178 / 27.0;
/// Default ω_c/ω_m.
pub const DEFAULT_OMEGA_C_RATIO: u32 = 20;
/// Default cavity truncation.
pub const DEFAULT_CAVITY_DIM: usize = 60;
/// Default phonon truncation.
pub const DEFAULT_MECH_DIM: usize = 15;

const THETA: f64 = 5.0 * PI / 12.0;
const I: C64 = C64 { re: 0.0, im: 1.0 };

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Physical constants and truncation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub omega_m: f64,
    pub omega_c_ratio: u32,
    pub k: f64,
    pub space: FockSpace,
}

impl SystemParams {
    pub fn new(k: f64, space: FockSpace) -> Result<Self> {
        let p = Self { omega_m: 1.0, omega_c_ratio: DEFAULT_OMEGA_C_RATIO, k, space };
        p.validate()?;
        Ok(p)
    }

    pub fn with_omega_c_ratio(mut self, ratio: u32) -> Result<Self> {
        self.omega_c_ratio = ratio;
        self.validate()?;
        Ok(self)
    }

    pub fn with_space(mut self, space: FockSpace) -> Self {
        self.space = space;
        self
    }

    /// Checks `0 < k < 1` and `ω_m = 1`. An odd ω_c/ω_m is only rejected by
    /// operations that rely on the half-period identity.
    pub fn validate(&self) -> Result<()> {
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::InvalidParameter(format!("coupling ratio k = {} must lie in (0, 1)", self.k)));
        }
        if self.omega_m != 1.0 {
            return Err(Error::InvalidParameter("frequencies are scaled so that omega_m = 1".into()));
        }
        if self.omega_c_ratio == 0 {
            return Err(Error::InvalidParameter("omega_c_ratio must be positive".into()));
        }
        Ok(())
    }

    pub fn require_even_ratio(&self) -> Result<()> {
        if !self.omega_c_ratio.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "omega_c_ratio = {} must be even for the half-period identity",
                self.omega_c_ratio
            )));
        }
        Ok(())
    }

    pub fn omega_c(&self) -> f64 {
        self.omega_c_ratio as f64 * self.omega_m
    }
}

/// Reference frame for Hamiltonians and drive values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Frame {
    Lab,
    #[default]
    Rotating,
}

/// A constant-amplitude drive window; `t_start` and `duration` are in
/// units of `T`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivePulse {
    pub eta: f64,
    pub psi: f64,
    pub t_start: f64,
    pub duration: f64,
}

impl DrivePulse {
    pub fn new(eta: f64, psi: f64, t_start: f64, duration: f64) -> Result<Self> {
        if !(duration > 0.0) {
            return Err(Error::InvalidParameter(format!("pulse duration {duration} must be positive")));
        }
        if !(eta >= 0.0) || !eta.is_finite() || !psi.is_finite() {
            return Err(Error::InvalidParameter(format!("pulse amplitude {eta} / phase {psi} invalid")));
        }
        Ok(Self { eta, psi, t_start, duration })
    }

    /// Window start in physical time.
    pub fn start(&self) -> f64 {
        self.t_start * PERIOD
    }

    pub fn end(&self) -> f64 {
        (self.t_start + self.duration) * PERIOD
    }

    /// Whether physical time `t` lies in the half-open window.
    pub fn contains(&self, t: f64) -> bool {
        t >= self.start() && t < self.end()
    }

    /// Rotating-frame drive `2iη e^{iψ} cos 2t` ignoring the window.
    pub fn rotating_value(&self, t: f64) -> C64 {
        I * 2.0 * self.eta * C64::from_polar(1.0, self.psi) * (2.0 * t).cos()
    }
}

/// Drive at physical time `t`; zero outside the pulse window.
pub fn drive_value(pulse: &DrivePulse, t: f64, frame: Frame, omega_c_ratio: u32) -> C64 {
    if !pulse.contains(t) {
        return C64::new(0.0, 0.0);
    }
    let rot = pulse.rotating_value(t);
    match frame {
        Frame::Rotating => rot,
        Frame::Lab => rot * C64::from_polar(1.0, -(omega_c_ratio as f64) * t),
    }
}

/// `f(t) = ∫₀ᵗ e^{iω_c τ} d(τ) dτ` in closed form: each window contributes
/// `iη e^{iψ} (sin 2t_b − sin 2t_a)` over its overlap `[t_a, t_b]` with `[0, t]`.
pub fn displacement_f(pulses: &[DrivePulse], t: f64) -> C64 {
    pulses
        .iter()
        .filter_map(|p| {
            let lo = p.start().max(0.0);
            let hi = p.end().min(t);
            (hi > lo).then(|| I * p.eta * C64::from_polar(1.0, p.psi) * ((2.0 * hi).sin() - (2.0 * lo).sin()))
        })
        .sum()
}

/// Single-mode ladder algebra for one truncation.
#[derive(Clone, Debug)]
pub struct Ladder {
    pub a: DMatrix<C64>,
    pub ad: DMatrix<C64>,
    pub n: DMatrix<C64>,
}

impl Ladder {
    pub fn new(dim: usize) -> Result<Self> {
        let a = annihilation(dim)?;
        let ad = a.adjoint();
        Ok(Self { a, ad, n: number(dim) })
    }

    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn identity(&self) -> DMatrix<C64> {
        DMatrix::identity(self.dim(), self.dim())
    }
}

fn hc(m: DMatrix<C64>) -> DMatrix<C64> {
    let adj = m.adjoint();
    m + adj
}

fn cube(m: &DMatrix<C64>) -> DMatrix<C64> {
    m * m * m
}

fn composite(cavity: &DMatrix<C64>, mech: &DMatrix<C64>) -> Operator {
    let fs = FockSpace { cavity_dim: cavity.nrows(), mech_dim: mech.nrows() };
    Operator::new(Space::Composite(fs), cavity.kronecker(mech)).expect("kronecker dimensions")
}

/// Phase-shifted cavity momentum `P_ψ = (i/√2)(a e^{−iψ} − a† e^{iψ})`.
pub fn cavity_momentum(psi: f64, dim: usize) -> Result<Operator> {
    let l = Ladder::new(dim)?;
    let m = (&l.a * C64::from_polar(1.0, -psi) - &l.ad * C64::from_polar(1.0, psi)) * (I * FRAC_1_SQRT_2);
    Ok(Operator::cavity(m))
}

/// Phase-shifted cavity quadrature `X_ψ = (a e^{−iψ} + a† e^{iψ})/√2`.
pub fn cavity_position(psi: f64, dim: usize) -> Result<Operator> {
    let l = Ladder::new(dim)?;
    let m = (&l.a * C64::from_polar(1.0, -psi) + &l.ad * C64::from_polar(1.0, psi)) * re(FRAC_1_SQRT_2);
    Ok(Operator::cavity(m))
}

/// `X_m = (b + b†)/√2`.
pub fn mech_position(dim: usize) -> Result<Operator> {
    let l = Ladder::new(dim)?;
    Ok(Operator::mech((&l.a + &l.ad) * re(FRAC_1_SQRT_2)))
}

/// `P_m = (i/√2)(b − b†)`.
pub fn mech_momentum(dim: usize) -> Result<Operator> {
    let l = Ladder::new(dim)?;
    Ok(Operator::mech((&l.a - &l.ad) * (I * FRAC_1_SQRT_2)))
}

/// Sparse composite operators shared by every time step.
#[derive(Clone, Debug)]
pub struct HamiltonianParts {
    pub space: FockSpace,
    /// `n_m − k n_c (b + b†)`.
    pub undriven: SparseMatrix,
    pub a: SparseMatrix,
    pub a_dag: SparseMatrix,
    pub n_c: SparseMatrix,
}

impl HamiltonianParts {
    pub fn new(params: &SystemParams) -> Result<Self> {
        let fs = params.space;
        let c = Ladder::new(fs.cavity_dim)?;
        let m = Ladder::new(fs.mech_dim)?;
        let n_m = SparseMatrix::kron(&c.identity(), &m.n);
        let coupling = SparseMatrix::kron(&c.n, &(&m.a + &m.ad));
        let undriven = SparseMatrix::linear_combination(
            fs.dim(),
            &[(re(params.omega_m), &n_m), (re(-params.k * params.omega_m), &coupling)],
        );
        Ok(Self {
            space: fs,
            undriven,
            a: SparseMatrix::kron(&c.a, &m.identity()),
            a_dag: SparseMatrix::kron(&c.ad, &m.identity()),
            n_c: SparseMatrix::kron(&c.n, &m.identity()),
        })
    }

    /// Terms of `H_undriven + c a† + c* a (+ ω_c n_c)` for a drive value `c`.
    pub fn terms(&self, drive: C64, cavity_freq: f64) -> Vec<(C64, &SparseMatrix)> {
        let mut t = vec![(re(1.0), &self.undriven)];
        if drive != C64::new(0.0, 0.0) {
            t.push((drive, &self.a_dag));
            t.push((drive.conj(), &self.a));
        }
        if cavity_freq != 0.0 {
            t.push((re(cavity_freq), &self.n_c));
        }
        t
    }

    pub fn assemble(&self, drive: C64, cavity_freq: f64) -> SparseMatrix {
        SparseMatrix::linear_combination(self.space.dim(), &self.terms(drive, cavity_freq))
    }
}

/// Full Hamiltonian at physical time `t` for the given pulses.
///
/// Rotating frame: `ω_m n_m − g₀ n_c(b+b†) + c(t)a† + c*(t)a`. The lab frame
/// adds `ω_c n_c` and uses `d(t)` directly.
pub fn hamiltonian_lab(params: &SystemParams, pulses: &[DrivePulse], t: f64, frame: Frame) -> Result<Operator> {
    let parts = HamiltonianParts::new(params)?;
    let drive: C64 = pulses.iter().map(|p| drive_value(p, t, frame, params.omega_c_ratio)).sum();
    let wc = if frame == Frame::Lab { params.omega_c() } else { 0.0 };
    Operator::new(Space::Composite(params.space), parts.assemble(drive, wc).to_dense())
}

/// Interaction-picture coupling `−k (a† + α*)(a + α)(b e^{−it} + b† e^{it})`
/// with the cavity displacement `α = −i f(t)`.
pub fn interaction_frame_hamiltonian(k: f64, alpha: C64, t: f64, space: FockSpace) -> Result<Operator> {
    let c = Ladder::new(space.cavity_dim)?;
    let m = Ladder::new(space.mech_dim)?;
    let id = c.identity();
    let shifted = (&c.ad + &id * alpha.conj()) * (&c.a + &id * alpha);
    let mech = &m.a * C64::from_polar(1.0, -t) + &m.ad * C64::from_polar(1.0, t);
    Ok(composite(&shifted, &mech).scale(re(-k)))
}

/// `M₂^C = −2n² − (4η²/3)n + (η²/3)(a² e^{−2iψ} + h.c.)`.
pub fn m2_cavity(eta: f64, psi: f64, dim: usize) -> Result<Operator> {
    let l = Ladder::new(dim)?;
    let e2 = eta * eta;
    let a2 = &l.a * &l.a * C64::from_polar(e2 / 3.0, -2.0 * psi);
    let m = &l.n * &l.n * re(-2.0) - &l.n * re(4.0 * e2 / 3.0) + hc(a2);
    Ok(Operator::cavity(m))
}

/// `M₂^I = −√2 η P_ψ (b² + b†²)`.
pub fn m2_interaction(eta: f64, psi: f64, space: FockSpace) -> Result<Operator> {
    let p = cavity_momentum(psi, space.cavity_dim)?;
    let m = Ladder::new(space.mech_dim)?;
    let b2 = hc(&m.a * &m.a);
    Ok(composite(p.matrix(), &b2).scale(re(-SQRT_2 * eta)))
}

/// `M₃^M = yη² (b† cos θ + b sin θ)³ + h.c.` with `θ = 5π/12`.
pub fn m3_mech(eta: f64, dim: usize) -> Result<Operator> {
    let l = Ladder::new(dim)?;
    let q = &l.ad * re(THETA.cos()) + &l.a * re(THETA.sin());
    Ok(Operator::mech(hc(cube(&q) * re(Y_COEFF * eta * eta))))
}

/// Third-order interaction `√2 A_ψX_m + B_ψP_m + √2 X_ψG_m`.
///
/// The `A_ψX_m` and `X_ψG_m` weights were fixed against a numerical
/// third-order extraction from the exact one-period propagator.
pub fn m3_interaction(eta: f64, psi: f64, space: FockSpace) -> Result<Operator> {
    let (dc, dm) = (space.cavity_dim, space.mech_dim);
    let c = Ladder::new(dc)?;
    let m = Ladder::new(dm)?;
    let p_psi = cavity_momentum(psi, dc)?.into_matrix();
    let x_psi = cavity_position(psi, dc)?.into_matrix();
    let a_psi = (&p_psi * re(36.0 * eta.powi(3)) + (&c.n * &p_psi + &p_psi * &c.n) * re(35.0 * eta)) * re(SQRT_2 / 15.0);
    let b_psi = b_psi_operator(eta, psi, &c);
    let q = &m.ad * re(THETA.cos()) - &m.a * re(THETA.sin());
    let g_m = hc(cube(&q) * (I * 0.75 * Y_COEFF * eta));
    let x_m = mech_position(dm)?.into_matrix();
    let p_m = mech_momentum(dm)?.into_matrix();
    let total = composite(&a_psi, &x_m).scale(re(SQRT_2))
        + composite(&b_psi, &p_m)
        + composite(&x_psi, &g_m).scale(re(SQRT_2));
    Ok(total)
}

/// `B_ψ = 2√2 i η² (a†² e^{2iψ} − a² e^{−2iψ})`.
fn b_psi_operator(eta: f64, psi: f64, c: &Ladder) -> DMatrix<C64> {
    (&c.ad * &c.ad * C64::from_polar(1.0, 2.0 * psi) - &c.a * &c.a * C64::from_polar(1.0, -2.0 * psi))
        * (I * 2.0 * SQRT_2 * eta * eta)
}

/// Residual `k³ B₀ P_m / 3` left over a two-period window, with `B` taken
/// at `ψ = 0`.
pub fn residual_third_order(eta: f64, params: &SystemParams) -> Result<Operator> {
    let c = Ladder::new(params.space.cavity_dim)?;
    let p_m = mech_momentum(params.space.mech_dim)?.into_matrix();
    Ok(composite(&b_psi_operator(eta, 0.0, &c), &p_m).scale(re(params.omega_m * params.k.powi(3) / 3.0)))
}

/// Truncation order of the per-block effective Hamiltonian.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Order {
    #[serde(rename = "2")]
    Second,
    #[serde(rename = "3")]
    Third,
}

impl Order {
    pub fn from_int(n: u32) -> Result<Self> {
        match n {
            2 => Ok(Order::Second),
            3 => Ok(Order::Third),
            _ => Err(Error::InvalidParameter(format!("effective order must be 2 or 3, got {n}"))),
        }
    }
}

/// Generator of one protocol block: the block propagator is
/// `exp(−i T (h2 + h3))` with `T` the mechanical period.
#[derive(Clone, Debug)]
pub struct EffectiveBlock {
    pub order: Order,
    pub eta: f64,
    /// `ω_m k² H⁽²⁾` on the cavity.
    pub h2: Operator,
    /// `ω_m k³ H⁽³⁾` on the composite space (order 3 only).
    pub h3: Option<Operator>,
}

impl EffectiveBlock {
    /// Time multiplying the generator in the block propagator.
    pub const DURATION: f64 = PERIOD;

    /// The full generator: cavity-only for order 2, composite for order 3.
    pub fn generator(&self, mech_dim: usize) -> Result<Operator> {
        match &self.h3 {
            None => Ok(self.h2.clone()),
            Some(h3) => Ok(&crate::fock::embed_cavity(&self.h2, mech_dim)? + h3),
        }
    }
}

/// `H⁽²⁾ = (2/3)η²(a² + a†²) − 5n²` on a cavity of the given dimension.
pub fn h2_operator(eta: f64, dim: usize) -> Result<Operator> {
    let l = Ladder::new(dim)?;
    let m = hc(&l.a * &l.a) * re(2.0 * eta * eta / 3.0) - &l.n * &l.n * re(5.0);
    Ok(Operator::cavity(m))
}

/// `H⁽³⁾ = (4/3)η²(a² − a†²)(b − b†)`, i.e. `(2/3)B₀P_m`, one `B₀P_m/3`
/// residual per driven window.
pub fn h3_operator(eta: f64, space: FockSpace) -> Result<Operator> {
    let c = Ladder::new(space.cavity_dim)?;
    let m = Ladder::new(space.mech_dim)?;
    let cav = (&c.a * &c.a - &c.ad * &c.ad) * re(4.0 * eta * eta / 3.0);
    Ok(composite(&cav, &(&m.a - &m.ad)))
}

pub fn block_effective_hamiltonian(eta: f64, params: &SystemParams, order: Order) -> Result<EffectiveBlock> {
    let k = params.k;
    let h2 = h2_operator(eta, params.space.cavity_dim)?.scale(re(params.omega_m * k * k));
    let h3 = match order {
        Order::Second => None,
        Order::Third => Some(h3_operator(eta, params.space)?.scale(re(params.omega_m * k.powi(3)))),
    };
    Ok(EffectiveBlock { order, eta, h2, h3 })
}

/// `H_g = ω_m k² Σ_j ((2/3)η_j²(a² + a†²) − 4n²)` for the protocol without
/// free half-periods.
pub fn second_order_block_hg(etas: &[f64], params: &SystemParams) -> Result<Operator> {
    if etas.is_empty() {
        return Err(Error::InvalidParameter("at least one block amplitude is required".into()));
    }
    let l = Ladder::new(params.space.cavity_dim)?;
    let a2 = hc(&l.a * &l.a);
    let n2 = &l.n * &l.n;
    let s: f64 = etas.iter().map(|e| e * e).sum();
    let m = (a2 * re(2.0 * s / 3.0) - n2 * re(4.0 * etas.len() as f64)) * re(params.omega_m * params.k * params.k);
    Ok(Operator::cavity(m))
}

/// Composite matrix of `e^{πik²n²} exp(+2√2 i k n_c P_m) e^{−iπn_m}`, built
/// block-diagonally in the photon number.
///
/// This product is the exact undriven propagator over `T/2` in the rotating
/// frame (up to a global phase); with the opposite sign in the middle factor
/// it would describe backward evolution.
pub fn half_period_propagator(params: &SystemParams) -> Result<Operator> {
    params.require_even_ratio()?;
    let fs = params.space;
    let (dc, dm) = (fs.cavity_dim, fs.mech_dim);
    let k = params.k;
    let p_m = mech_momentum(dm)?.into_matrix();
    let parity = DMatrix::from_diagonal(&DVector::from_fn(dm, |m, _| if m % 2 == 0 { re(1.0) } else { re(-1.0) }));
    let mut u = DMatrix::<C64>::zeros(fs.dim(), fs.dim());
    for n in 0..dc {
        let nf = n as f64;
        // exp(+2√2 i k n P_m) = exp(−i P_m t) with t = −2√2 k n
        let shift = expm_hermitian(&p_m, -2.0 * SQRT_2 * k * nf);
        let block = shift * &parity * C64::from_polar(1.0, PI * k * k * nf * nf);
        u.view_mut((n * dm, n * dm), (dm, dm)).copy_from(&block);
    }
    Operator::new(Space::Composite(fs), u)
}

/// `‖U† − U e^{−2πik²n_c²}‖_F` for the half-period propagator.
pub fn half_period_adjoint_residual(params: &SystemParams) -> Result<f64> {
    let u = half_period_propagator(params)?;
    let fs = params.space;
    let phase = DMatrix::from_diagonal(&DVector::from_fn(fs.dim(), |i, _| {
        let n = (i / fs.mech_dim) as f64;
        C64::from_polar(1.0, -2.0 * PI * params.k * params.k * n * n)
    }));
    Ok((u.matrix().adjoint() - u.matrix() * phase).norm())
}

/// `V_φ = e^{iφ n_c}` as a diagonal over photon numbers.
pub fn frame_phase_diagonal(phi: f64, cavity_dim: usize) -> Vec<C64> {
    (0..cavity_dim).map(|n| C64::from_polar(1.0, phi * n as f64)).collect()
}
