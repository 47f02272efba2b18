//! The three propagators: time-stepped exact unitary dynamics, per-block
//! effective-Hamiltonian dynamics, and Trotter-split dissipative dynamics.
//!
//! Every stored state is in the cavity-rotating frame at the recorded time.
//! The effective pipelines apply the accumulated frame phase `V_φ = e^{iφn_c}`
//! before recording, so their states are directly comparable with the exact
//! ones at block boundaries.

use std::collections::HashMap;
use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::dissipation::Lindbladian;
use crate::error::{Error, Result};
use crate::expm::{expm_action, KrylovOptions};
use crate::fock::{fidelity, partial_trace_mech, FockSpace, Leakage, QuantumState, Space, StateData};
use crate::model::{
    block_effective_hamiltonian, frame_phase_diagonal, DrivePulse, Frame, HamiltonianParts, Order, SystemParams,
    BLOCK_PERIODS, PERIOD,
};
use crate::par::{self, Execution};
use crate::schedule::{DrivingPattern, SegmentKind};
use crate::sparse::{SparseMatrix, SparseSum};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const ONE: C64 = C64 { re: 1.0, im: 0.0 };

/// Weights below this are dropped when a mixed state is split into pure
/// components.
const ENSEMBLE_CUTOFF: f64 = 1e-14;
/// Allowed trace drift of the dissipative solver.
const TRACE_TOL: f64 = 1e-4;

/// Time-stepping rule for driven windows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Integrator {
    /// One exponential per step with the Hamiltonian sampled at the step
    /// midpoint.
    Midpoint,
    /// Fourth-order commutator-free scheme with two Gauss-point samples.
    #[default]
    Magnus4,
}

/// Operator splitting for the dissipative solver.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Splitting {
    #[default]
    Lie,
    Strang,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub steps_per_period: usize,
    /// Snapshot spacing in units of `T`; 0 records block boundaries only.
    pub record_stride: f64,
    pub frame: Frame,
    pub integrator: Integrator,
    pub krylov_tol: f64,
    /// Splitting steps per mechanical period in the dissipative solver.
    pub lindblad_steps_per_period: usize,
    pub splitting: Splitting,
    /// Keep the reduced cavity state of every snapshot.
    pub store_states: bool,
    pub execution: Execution,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            steps_per_period: 200,
            record_stride: 0.0,
            frame: Frame::Rotating,
            integrator: Integrator::Magnus4,
            krylov_tol: 1e-12,
            lindblad_steps_per_period: 4,
            splitting: Splitting::Strang,
            store_states: true,
            execution: Execution::default(),
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_period < 100 || !self.steps_per_period.is_multiple_of(2) {
            return Err(Error::InvalidParameter(format!(
                "steps_per_period = {} must be even and at least 100",
                self.steps_per_period
            )));
        }
        if self.lindblad_steps_per_period == 0 {
            return Err(Error::InvalidParameter("lindblad_steps_per_period must be positive".into()));
        }
        if !(self.record_stride >= 0.0) {
            return Err(Error::InvalidParameter("record_stride must be non-negative".into()));
        }
        if !(self.krylov_tol > 0.0) {
            return Err(Error::InvalidParameter("krylov_tol must be positive".into()));
        }
        Ok(())
    }

    fn krylov(&self) -> KrylovOptions {
        KrylovOptions { tol: self.krylov_tol, ..KrylovOptions::default() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PropagatorKind {
    Exact,
    Effective2,
    Effective3,
    Dissipative,
}

/// Inputs a result was produced from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub params: SystemParams,
    pub block_amplitudes: Vec<f64>,
    pub config: Option<PropagationConfig>,
    pub lindbladian: Vec<(String, f64)>,
}

#[derive(Clone, Debug)]
pub struct SimulationResult {
    pub kind: PropagatorKind,
    /// Snapshot times in units of `T`.
    pub times: Vec<f64>,
    pub cavity_populations: Vec<Vec<f64>>,
    /// Reduced cavity states per snapshot (empty unless stored).
    pub reduced_cavity_states: Vec<DMatrix<C64>>,
    pub final_state: QuantumState,
    /// Frame phase `φ` applied to the effective state at the end.
    pub frame_phase: f64,
    pub leakage: Leakage,
    pub leakage_flagged: bool,
    /// Largest `|Tr ρ − 1|` seen.
    pub trace_drift: f64,
    /// Smallest eigenvalue of the reduced cavity states seen.
    pub min_eigenvalue: f64,
    pub warnings: Vec<String>,
    pub provenance: Provenance,
}

impl SimulationResult {
    /// Reduced cavity state at the end of the run.
    pub fn final_cavity_state(&self) -> Result<QuantumState> {
        match self.final_state.space() {
            Space::Cavity(_) => Ok(self.final_state.clone()),
            Space::Composite(_) => partial_trace_mech(&self.final_state),
            s => Err(Error::Contract(format!("final state on {s:?} has no cavity"))),
        }
    }

    /// Fidelity of every stored reduced state with a pure cavity target.
    pub fn fidelity_trace(&self, target: &QuantumState) -> Result<Vec<f64>> {
        self.reduced_cavity_states
            .iter()
            .map(|r| fidelity(&QuantumState::mixed_unchecked(target.space(), r.clone()), target))
            .collect()
    }

    pub fn cavity_dim(&self) -> usize {
        self.cavity_populations.first().map(Vec::len).unwrap_or(0)
    }
}

/// Splits a state into weighted pure components.
fn ensemble(state: &QuantumState) -> Vec<(f64, DVector<C64>)> {
    match state.data() {
        StateData::Pure(v) => vec![(1.0, v.clone())],
        StateData::Mixed(m) => {
            let d = m.nrows();
            let off_diag = (0..d).any(|i| (0..d).any(|j| i != j && m[(i, j)] != ZERO));
            if !off_diag {
                return (0..d)
                    .filter(|&i| m[(i, i)].re > ENSEMBLE_CUTOFF)
                    .map(|i| {
                        let mut v = DVector::zeros(d);
                        v[i] = ONE;
                        (m[(i, i)].re, v)
                    })
                    .collect();
            }
            let eig = SymmetricEigen::new(m.clone());
            (0..d)
                .filter(|&i| eig.eigenvalues[i] > ENSEMBLE_CUTOFF)
                .map(|i| (eig.eigenvalues[i], eig.eigenvectors.column(i).into_owned()))
                .collect()
        }
    }
}

fn recombine(space: Space, members: &[(f64, DVector<C64>)]) -> QuantumState {
    if members.len() == 1 {
        let (w, v) = &members[0];
        if (*w - 1.0).abs() < 1e-15 {
            return QuantumState::pure(space, v.clone()).unwrap_or_else(|_| {
                let n = v.norm();
                QuantumState::pure_normalized(space, v.clone()).unwrap_or_else(|_| panic!("degenerate state, norm {n}"))
            });
        }
    }
    let d = space.dim();
    let mut rho = DMatrix::zeros(d, d);
    for (w, v) in members {
        rho += v * v.adjoint() * C64::new(*w, 0.0);
    }
    QuantumState::mixed_unchecked(space, rho)
}

/// Reduced cavity matrix and phonon populations of `|v⟩⟨v|`.
fn reduce(fs: FockSpace, v: &DVector<C64>) -> (DMatrix<C64>, Vec<f64>) {
    let (dc, dm) = (fs.cavity_dim, fs.mech_dim);
    let psi = DMatrix::from_fn(dc, dm, |n, m| v[fs.index(n, m)]);
    let cav = &psi * psi.adjoint();
    let mech = (0..dm).map(|m| (0..dc).map(|n| psi[(n, m)].norm_sqr()).sum()).collect();
    (cav, mech)
}

/// Accumulates snapshots of a weighted ensemble.
struct Recorder {
    store: bool,
    times: Vec<f64>,
    pops: Vec<Vec<f64>>,
    states: Vec<DMatrix<C64>>,
    leakage: Leakage,
    trace_drift: f64,
    min_eig: f64,
}

impl Recorder {
    fn new(store: bool) -> Self {
        Self {
            store,
            times: Vec::new(),
            pops: Vec::new(),
            states: Vec::new(),
            leakage: Leakage::default(),
            trace_drift: 0.0,
            min_eig: f64::INFINITY,
        }
    }

    fn push(&mut self, t: f64, cavity: DMatrix<C64>, mech_pops: &[f64], last: bool) {
        let dc = cavity.nrows();
        let pops: Vec<f64> = (0..dc).map(|i| cavity[(i, i)].re).collect();
        let top2 = |p: &[f64]| p.iter().rev().take(2).sum::<f64>();
        let leak = Leakage { cavity_top: top2(&pops), mech_top: top2(mech_pops) };
        self.leakage = self.leakage.max(leak);
        self.trace_drift = self.trace_drift.max((pops.iter().sum::<f64>() - 1.0).abs());
        self.times.push(t);
        self.pops.push(pops);
        if self.store || last {
            self.states.push(cavity);
        }
    }

    fn finish(
        mut self,
        kind: PropagatorKind,
        final_state: QuantumState,
        frame_phase: f64,
        provenance: Provenance,
        mut warnings: Vec<String>,
    ) -> SimulationResult {
        if !self.store && self.states.len() > 1 {
            let last = self.states.pop().expect("non-empty");
            self.states = vec![last];
        }
        let flagged = self.leakage.flagged();
        if flagged {
            let msg = format!(
                "truncation leakage: cavity top-2 population {:.3e}, phonon top-2 population {:.3e}",
                self.leakage.cavity_top, self.leakage.mech_top
            );
            log::warn!("{msg}");
            warnings.push(msg);
        }
        SimulationResult {
            kind,
            times: self.times,
            cavity_populations: self.pops,
            reduced_cavity_states: self.states,
            final_state,
            frame_phase,
            leakage: self.leakage,
            leakage_flagged: flagged,
            trace_drift: self.trace_drift,
            min_eigenvalue: if self.min_eig.is_finite() { self.min_eig } else { 0.0 },
            warnings,
            provenance,
        }
    }
}

fn composite_space(state: &QuantumState, expected: FockSpace) -> Result<()> {
    match state.space() {
        Space::Composite(fs) if fs == expected => Ok(()),
        s => Err(Error::SpaceMismatch(format!("initial state on {s:?}, expected composite {expected:?}"))),
    }
}

/// One entry of the precomputed exact-propagation schedule.
#[derive(Clone, Copy, Debug)]
enum Step {
    /// `exp(−i dt (w·H_static + c a† + c* a))`.
    Unitary { weight: f64, drive: C64, dt: f64 },
    /// `exp(−i dt H_static)`.
    Free { dt: f64 },
    Record { t: f64 },
}

const GAUSS_C1: f64 = 0.5 - 0.288_675_134_594_812_9;
const GAUSS_C2: f64 = 0.5 + 0.288_675_134_594_812_9;
const CF_A1: f64 = 0.25 + 0.288_675_134_594_812_9;
const CF_A2: f64 = 0.25 - 0.288_675_134_594_812_9;

fn exact_plan(pattern: &DrivingPattern, config: &PropagationConfig) -> Result<Vec<Step>> {
    let spp = config.steps_per_period;
    let dt = PERIOD / spp as f64;
    let block_steps = (BLOCK_PERIODS as usize) * spp;
    let stride = if config.record_stride > 0.0 { ((config.record_stride * spp as f64).round() as usize).max(1) } else { 0 };
    let wc = pattern.params.omega_c_ratio as f64;
    let drive_at = |p: &DrivePulse, t: f64| match config.frame {
        Frame::Rotating => p.rotating_value(t),
        Frame::Lab => p.rotating_value(t) * C64::from_polar(1.0, -wc * t),
    };
    let mut plan = vec![Step::Record { t: 0.0 }];
    let mut s = 0usize;
    for (seg, start) in pattern.segments.iter().zip(pattern.segment_starts()) {
        let n = (seg.duration_t * spp as f64).round() as usize;
        if ((n as f64) - seg.duration_t * spp as f64).abs() > 1e-9 {
            return Err(Error::InvalidParameter("segment durations must be whole numbers of steps".into()));
        }
        for i in 0..n {
            let t0 = s as f64 * dt;
            match seg.kind {
                SegmentKind::Driven => {
                    let period = i / spp;
                    let pulse = DrivePulse { eta: seg.eta, psi: seg.psi[period], t_start: start + period as f64, duration: 1.0 };
                    match config.integrator {
                        Integrator::Midpoint => {
                            plan.push(Step::Unitary { weight: 1.0, drive: drive_at(&pulse, t0 + 0.5 * dt), dt });
                        }
                        Integrator::Magnus4 => {
                            let c1 = drive_at(&pulse, t0 + GAUSS_C1 * dt);
                            let c2 = drive_at(&pulse, t0 + GAUSS_C2 * dt);
                            plan.push(Step::Unitary { weight: 0.5, drive: c1 * CF_A1 + c2 * CF_A2, dt });
                            plan.push(Step::Unitary { weight: 0.5, drive: c1 * CF_A2 + c2 * CF_A1, dt });
                        }
                    }
                }
                SegmentKind::Free => match plan.last_mut() {
                    Some(Step::Free { dt: acc }) => *acc += dt,
                    _ => plan.push(Step::Free { dt }),
                },
            }
            s += 1;
            if s.is_multiple_of(block_steps) || (stride > 0 && s.is_multiple_of(stride)) {
                plan.push(Step::Record { t: s as f64 / spp as f64 });
            }
        }
    }
    Ok(plan)
}

struct MemberTrace {
    snapshots: Vec<(DMatrix<C64>, Vec<f64>)>,
    final_vec: DVector<C64>,
}

/// Numerically exact propagation of the full Hamiltonian along `pattern`.
///
/// Mixed initial states are split into pure components that are propagated
/// independently (in parallel when enabled) and recombined.
pub fn propagate_exact(
    pattern: &DrivingPattern,
    initial: &QuantumState,
    config: &PropagationConfig,
) -> Result<SimulationResult> {
    config.validate()?;
    pattern.validate()?;
    let params = pattern.params;
    let fs = params.space;
    composite_space(initial, fs)?;
    let parts = HamiltonianParts::new(&params)?;
    let plan = exact_plan(pattern, config)?;
    let opts = config.krylov();
    let wc = if config.frame == Frame::Lab { params.omega_c() } else { 0.0 };
    let members = ensemble(initial);

    let run = |_: usize, member: &(f64, DVector<C64>)| -> Result<MemberTrace> {
        let mut v = member.1.clone();
        let mut snapshots = Vec::new();
        for step in &plan {
            match *step {
                Step::Unitary { weight, drive, dt } => {
                    let mut terms = vec![(C64::new(weight, 0.0), &parts.undriven), (drive, &parts.a_dag), (drive.conj(), &parts.a)];
                    if wc != 0.0 {
                        terms.push((C64::new(weight * wc, 0.0), &parts.n_c));
                    }
                    v = expm_action(&SparseSum::new(terms), &v, dt, opts)?;
                }
                Step::Free { dt } => {
                    let mut terms = vec![(ONE, &parts.undriven)];
                    if wc != 0.0 {
                        terms.push((C64::new(wc, 0.0), &parts.n_c));
                    }
                    v = expm_action(&SparseSum::new(terms), &v, dt, opts)?;
                }
                Step::Record { .. } => snapshots.push(reduce(fs, &v)),
            }
        }
        Ok(MemberTrace { snapshots, final_vec: v })
    };
    let traces: Vec<MemberTrace> = par::map(config.execution, &members, run).into_iter().collect::<Result<_>>()?;

    let record_times: Vec<f64> = plan.iter().filter_map(|s| if let Step::Record { t } = s { Some(*t) } else { None }).collect();
    let mut rec = Recorder::new(config.store_states);
    for (i, &t) in record_times.iter().enumerate() {
        let mut cav = DMatrix::zeros(fs.cavity_dim, fs.cavity_dim);
        let mut mech = vec![0.0; fs.mech_dim];
        for ((w, _), tr) in members.iter().zip(&traces) {
            let (c, m) = &tr.snapshots[i];
            cav += c * C64::new(*w, 0.0);
            mech.iter_mut().zip(m).for_each(|(a, b)| *a += w * b);
        }
        rec.push(t, cav, &mech, i + 1 == record_times.len());
    }
    let finals: Vec<(f64, DVector<C64>)> = members.iter().zip(traces).map(|((w, _), tr)| (*w, tr.final_vec)).collect();
    let norm_err = finals.iter().map(|(_, v)| (v.norm() - 1.0).abs()).fold(0.0, f64::max);
    let mut warnings = Vec::new();
    if norm_err > 1e-8 {
        warnings.push(format!("norm drift {norm_err:.3e}"));
    }
    let final_state = recombine(Space::Composite(fs), &finals);
    let provenance = Provenance {
        params,
        block_amplitudes: pattern.block_amplitudes.clone(),
        config: Some(config.clone()),
        lindbladian: Vec::new(),
    };
    Ok(rec.finish(PropagatorKind::Exact, final_state, 0.0, provenance, warnings))
}

/// Final-state fidelity change when the step count is doubled.
///
/// Fails with an accuracy error if the change exceeds `tol`.
pub fn step_doubling_check(
    pattern: &DrivingPattern,
    initial: &QuantumState,
    config: &PropagationConfig,
    target: &QuantumState,
    tol: f64,
) -> Result<f64> {
    let coarse = propagate_exact(pattern, initial, &PropagationConfig { store_states: false, ..config.clone() })?;
    let fine_cfg = PropagationConfig { steps_per_period: 2 * config.steps_per_period, store_states: false, ..config.clone() };
    let fine = propagate_exact(pattern, initial, &fine_cfg)?;
    let fc = fidelity(&coarse.final_cavity_state()?, target)?;
    let ff = fidelity(&fine.final_cavity_state()?, target)?;
    let delta = (fc - ff).abs();
    if delta > tol {
        return Err(Error::Accuracy(format!("fidelity changed by {delta:.3e} under step doubling")));
    }
    Ok(delta)
}

/// `exp(−i T k² H⁽²⁾(η))` restricted to one photon-number parity, where the
/// generator is a real symmetric tridiagonal matrix.
#[derive(Clone, Debug)]
pub struct SectorPropagator {
    indices: Vec<usize>,
    q: DMatrix<f64>,
    phases: Vec<C64>,
}

impl SectorPropagator {
    fn new(eta: f64, k: f64, dim: usize, parity: usize) -> Self {
        let indices: Vec<usize> = (parity..dim).step_by(2).collect();
        let m = indices.len();
        let c = 2.0 * eta * eta / 3.0;
        let diag: Vec<f64> = indices.iter().map(|&n| -5.0 * (n * n) as f64).collect();
        // ⟨n+2| a†² |n⟩ = √((n+1)(n+2))
        let off: Vec<f64> = indices.iter().take(m.saturating_sub(1)).map(|&n| c * (((n + 1) * (n + 2)) as f64).sqrt()).collect();
        let h = DMatrix::from_fn(m, m, |i, j| match i.abs_diff(j) {
            0 => diag[i],
            1 => off[i.min(j)],
            _ => 0.0,
        });
        let eig = SymmetricEigen::new(h);
        let scale = k * k * PERIOD;
        let phases = eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -scale * l)).collect();
        Self { indices, q: eig.eigenvectors, phases }
    }

    fn apply(&self, v: &mut [C64]) {
        let m = self.indices.len();
        if m == 0 || self.indices.iter().all(|&i| v[i] == ZERO) {
            return;
        }
        let mut y = vec![ZERO; m];
        for (j, yj) in y.iter_mut().enumerate() {
            let mut acc = ZERO;
            for (i, &n) in self.indices.iter().enumerate() {
                acc += v[n] * self.q[(i, j)];
            }
            *yj = acc * self.phases[j];
        }
        for (i, &n) in self.indices.iter().enumerate() {
            let mut acc = ZERO;
            for (j, yj) in y.iter().enumerate() {
                acc += *yj * self.q[(i, j)];
            }
            v[n] = acc;
        }
    }
}

/// Order-2 block propagator on the cavity, split by photon-number parity.
#[derive(Clone, Debug)]
pub struct CavityBlockPropagator {
    sectors: Vec<SectorPropagator>,
}

impl CavityBlockPropagator {
    pub fn new(eta: f64, k: f64, dim: usize) -> Self {
        Self { sectors: vec![SectorPropagator::new(eta, k, dim, 0), SectorPropagator::new(eta, k, dim, 1)] }
    }

    /// Only the even sector, enough for states that start in it.
    pub fn even_only(eta: f64, k: f64, dim: usize) -> Self {
        Self { sectors: vec![SectorPropagator::new(eta, k, dim, 0)] }
    }

    pub fn apply(&self, v: &mut [C64]) {
        for s in &self.sectors {
            s.apply(v);
        }
    }

    /// Dense unitary, for mixed-state propagation.
    pub fn matrix(&self, dim: usize) -> DMatrix<C64> {
        let mut u = DMatrix::identity(dim, dim);
        for j in 0..dim {
            let mut col = u.column(j).into_owned();
            self.apply(col.as_mut_slice());
            u.set_column(j, &col);
        }
        u
    }
}

/// Frame phase accumulated by a full block of amplitude `η`.
pub fn block_frame_phase(eta: f64, k: f64) -> f64 {
    4.0 * (4.0 / 3.0) * PI * k * k * eta * eta
}

fn apply_cavity_phase_vec(v: &DVector<C64>, phase: &[C64], mech_dim: usize) -> DVector<C64> {
    DVector::from_fn(v.len(), |i, _| v[i] * phase[i / mech_dim])
}

fn apply_cavity_phase_mat(rho: &DMatrix<C64>, phase: &[C64], mech_dim: usize) -> DMatrix<C64> {
    DMatrix::from_fn(rho.nrows(), rho.ncols(), |i, j| rho[(i, j)] * phase[i / mech_dim] * phase[j / mech_dim].conj())
}

/// Block-by-block propagation with `exp(−iT k²H⁽²⁾)` (cavity only) or
/// `exp(−iT(k²H⁽²⁾ + k³H⁽³⁾))` (composite), one snapshot per block.
pub fn propagate_effective(
    block_amplitudes: &[f64],
    params: &SystemParams,
    initial: &QuantumState,
    order: Order,
) -> Result<SimulationResult> {
    params.validate()?;
    let k = params.k;
    let provenance =
        Provenance { params: *params, block_amplitudes: block_amplitudes.to_vec(), config: None, lindbladian: Vec::new() };
    match order {
        Order::Second => {
            let dc = match initial.space() {
                Space::Cavity(d) => d,
                s => return Err(Error::Contract(format!("order-2 propagation needs a cavity-only state, got {s:?}"))),
            };
            let mut cache: HashMap<u64, CavityBlockPropagator> = HashMap::new();
            let mut rec = Recorder::new(true);
            let mut phi = 0.0;
            let mut state = initial.clone();
            rec.push(0.0, state.density(), &[0.0], block_amplitudes.is_empty());
            for (j, &eta) in block_amplitudes.iter().enumerate() {
                let prop = cache.entry(eta.to_bits()).or_insert_with(|| CavityBlockPropagator::new(eta, k, dc));
                state = match state.data() {
                    StateData::Pure(v) => {
                        let mut w = v.clone();
                        prop.apply(w.as_mut_slice());
                        QuantumState::pure_normalized(initial.space(), w)?
                    }
                    StateData::Mixed(r) => {
                        let u = prop.matrix(dc);
                        QuantumState::mixed_unchecked(initial.space(), &u * r * u.adjoint())
                    }
                };
                phi += block_frame_phase(eta, k);
                let v_phi = frame_phase_diagonal(phi, dc);
                let phys = apply_cavity_phase_mat(&state.density(), &v_phi, 1);
                rec.push(BLOCK_PERIODS * (j + 1) as f64, phys, &[0.0], j + 1 == block_amplitudes.len());
            }
            let v_phi = frame_phase_diagonal(phi, dc);
            let final_state = match state.data() {
                StateData::Pure(v) => QuantumState::pure_normalized(initial.space(), apply_cavity_phase_vec(v, &v_phi, 1))?,
                StateData::Mixed(r) => QuantumState::mixed_unchecked(initial.space(), apply_cavity_phase_mat(r, &v_phi, 1)),
            };
            Ok(rec.finish(PropagatorKind::Effective2, final_state, phi, provenance, Vec::new()))
        }
        Order::Third => {
            let fs = params.space;
            composite_space(initial, fs)?;
            let generators = effective_generators(block_amplitudes, params)?;
            let members = ensemble(initial);
            let opts = KrylovOptions::default();
            let run = |_: usize, m: &(f64, DVector<C64>)| -> Result<Vec<DVector<C64>>> {
                let mut v = m.1.clone();
                let mut out = vec![v.clone()];
                for &eta in block_amplitudes {
                    v = expm_action(&generators[&eta.to_bits()], &v, PERIOD, opts)?;
                    out.push(v.clone());
                }
                Ok(out)
            };
            let traces: Vec<Vec<DVector<C64>>> =
                par::map(Execution::default(), &members, run).into_iter().collect::<Result<_>>()?;
            let mut rec = Recorder::new(true);
            let mut phi = 0.0;
            let mut finals = Vec::new();
            for j in 0..=block_amplitudes.len() {
                if j > 0 {
                    phi += block_frame_phase(block_amplitudes[j - 1], k);
                }
                let v_phi = frame_phase_diagonal(phi, fs.cavity_dim);
                let mut cav = DMatrix::zeros(fs.cavity_dim, fs.cavity_dim);
                let mut mech = vec![0.0; fs.mech_dim];
                finals.clear();
                for ((w, _), tr) in members.iter().zip(&traces) {
                    let phys = apply_cavity_phase_vec(&tr[j], &v_phi, fs.mech_dim);
                    let (c, m) = reduce(fs, &phys);
                    cav += c * C64::new(*w, 0.0);
                    mech.iter_mut().zip(&m).for_each(|(a, b)| *a += w * b);
                    finals.push((*w, phys));
                }
                rec.push(BLOCK_PERIODS * j as f64, cav, &mech, j == block_amplitudes.len());
            }
            let final_state = recombine(Space::Composite(fs), &finals);
            Ok(rec.finish(PropagatorKind::Effective3, final_state, phi, provenance, Vec::new()))
        }
    }
}

/// Sparse order-3 generators `k²H⁽²⁾ ⊗ I + k³H⁽³⁾` keyed by amplitude bits.
fn effective_generators(block_amplitudes: &[f64], params: &SystemParams) -> Result<HashMap<u64, SparseMatrix>> {
    let mut out = HashMap::new();
    for &eta in block_amplitudes {
        if let std::collections::hash_map::Entry::Vacant(e) = out.entry(eta.to_bits()) {
            let g = block_effective_hamiltonian(eta, params, Order::Third)?.generator(params.space.mech_dim)?;
            e.insert(g.to_sparse());
        }
    }
    Ok(out)
}

/// `A B` with the columns of `B` split across the pool.
fn gemm(exec: Execution, a: &DMatrix<C64>, b: &DMatrix<C64>) -> DMatrix<C64> {
    let n = b.ncols();
    if !exec.is_parallel() || n < 64 {
        return a * b;
    }
    let chunk = n.div_ceil(8);
    let starts: Vec<usize> = (0..n).step_by(chunk).collect();
    let parts = par::map(exec, &starts, |_, &s| {
        let w = chunk.min(n - s);
        a * b.columns(s, w)
    });
    let mut out = DMatrix::zeros(a.nrows(), n);
    for (&s, p) in starts.iter().zip(parts) {
        out.columns_mut(s, p.ncols()).copy_from(&p);
    }
    out
}

/// `U ρ U†` for Hermitian `ρ`, computed as `U (U ρ)†` up to the adjoint.
fn conjugate(exec: Execution, u: &DMatrix<C64>, rho: &DMatrix<C64>) -> DMatrix<C64> {
    let x = gemm(exec, u, rho);
    let y = gemm(exec, u, &x.adjoint());
    let y = y.adjoint();
    (&y + y.adjoint()) * C64::new(0.5, 0.0)
}

fn min_eigenvalue(m: &DMatrix<C64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Dissipative propagation: per block, the order-3 effective Hamiltonian
/// acts for `5T` as `G/5` (so that the block unitary is `exp(−iGT)`),
/// interleaved with RK4 integration of the dissipator.
///
/// With a vanishing generator the run reduces to the unitary order-3
/// pipeline applied to the pure components of the initial state.
pub fn propagate_lindblad(
    pattern: &DrivingPattern,
    initial: &QuantumState,
    lindbladian: &Lindbladian,
    config: &PropagationConfig,
) -> Result<SimulationResult> {
    config.validate()?;
    pattern.validate()?;
    let params = pattern.params;
    let fs = params.space;
    composite_space(initial, fs)?;
    if lindbladian.space() != Space::Composite(fs) {
        return Err(Error::SpaceMismatch("generator and pattern live on different spaces".into()));
    }
    let lindblad_desc: Vec<(String, f64)> =
        lindbladian.jump_terms.iter().enumerate().map(|(i, t)| (format!("{:?}#{i}", lindbladian.label), t.rate)).collect();
    let k = params.k;
    if lindbladian.is_zero() {
        let mut r = propagate_effective(&pattern.block_amplitudes, &params, initial, Order::Third)?;
        r.kind = PropagatorKind::Dissipative;
        r.provenance.config = Some(config.clone());
        r.provenance.lindbladian = lindblad_desc;
        return Ok(r);
    }
    let exec = config.execution;
    let lsp = config.lindblad_steps_per_period;
    let dt = PERIOD / lsp as f64;
    let steps = BLOCK_PERIODS as usize * lsp;
    let mut unitaries: HashMap<u64, DMatrix<C64>> = HashMap::new();
    let mut rho = initial.density();
    let mut rec = Recorder::new(config.store_states);
    let mut warnings = Vec::new();
    rec.push(0.0, partial_trace_mech(&QuantumState::mixed_unchecked(Space::Composite(fs), rho.clone()))?.density(), &mech_pops(fs, &rho), false);
    let mut phi = 0.0;
    let n_blocks = pattern.block_amplitudes.len();
    for (j, &eta) in pattern.block_amplitudes.iter().enumerate() {
        let u = match unitaries.get(&eta.to_bits()) {
            Some(u) => u.clone(),
            None => {
                let g = block_effective_hamiltonian(eta, &params, Order::Third)?.generator(fs.mech_dim)?;
                let eig = SymmetricEigen::new(g.into_matrix());
                let q = &eig.eigenvectors;
                let d = DMatrix::from_diagonal(&DVector::from_iterator(
                    eig.eigenvalues.len(),
                    eig.eigenvalues.iter().map(|&l| C64::from_polar(1.0, -l / BLOCK_PERIODS * dt)),
                ));
                let u = q * d * q.adjoint();
                unitaries.insert(eta.to_bits(), u.clone());
                u
            }
        };
        for _ in 0..steps {
            match config.splitting {
                Splitting::Lie => {
                    rho = conjugate(exec, &u, &rho);
                    rho = lindbladian.evolve(&rho, dt, exec);
                }
                Splitting::Strang => {
                    rho = lindbladian.evolve(&rho, 0.5 * dt, exec);
                    rho = conjugate(exec, &u, &rho);
                    rho = lindbladian.evolve(&rho, 0.5 * dt, exec);
                }
            }
        }
        let drift = (rho.trace().re - 1.0).abs();
        if drift > TRACE_TOL {
            return Err(Error::Accuracy(format!("trace drifted by {drift:.3e} in block {j}")));
        }
        phi += block_frame_phase(eta, k);
        let v_phi = frame_phase_diagonal(phi, fs.cavity_dim);
        let phys = apply_cavity_phase_mat(&rho, &v_phi, fs.mech_dim);
        let cav = partial_trace_mech(&QuantumState::mixed_unchecked(Space::Composite(fs), phys))?.density();
        let me = min_eigenvalue(&cav);
        rec.min_eig = rec.min_eig.min(me);
        if me < -1e-8 {
            let msg = format!("reduced cavity state has eigenvalue {me:.3e} after block {j}");
            log::warn!("{msg}");
            warnings.push(msg);
        }
        rec.push(BLOCK_PERIODS * (j + 1) as f64, cav, &mech_pops(fs, &rho), j + 1 == n_blocks);
    }
    let v_phi = frame_phase_diagonal(phi, fs.cavity_dim);
    let final_state = QuantumState::mixed_unchecked(Space::Composite(fs), apply_cavity_phase_mat(&rho, &v_phi, fs.mech_dim));
    let provenance = Provenance {
        params,
        block_amplitudes: pattern.block_amplitudes.clone(),
        config: Some(config.clone()),
        lindbladian: lindblad_desc,
    };
    Ok(rec.finish(PropagatorKind::Dissipative, final_state, phi, provenance, warnings))
}

fn mech_pops(fs: FockSpace, rho: &DMatrix<C64>) -> Vec<f64> {
    (0..fs.mech_dim).map(|m| (0..fs.cavity_dim).map(|n| rho[(fs.index(n, m), fs.index(n, m))].re).sum()).collect()
}
