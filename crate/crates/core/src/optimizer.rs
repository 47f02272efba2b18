//! Bounded multistart Nelder–Mead search over per-block amplitudes against
//! the cavity-only order-2 propagation.
//!
//! For a superposition target with a free phase the best `ϑ` is obtained in
//! closed form for every amplitude vector, which is the exact inner
//! maximization of a joint search over `(η, ϑ)`.

use std::collections::HashMap;

use nalgebra::DVector;
use num_complex::Complex64 as C64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{FockSpace, QuantumState, Space};
use crate::metrics::{target_fidelity, TargetState};
use crate::model::{frame_phase_diagonal, Order, SystemParams, DEFAULT_CAVITY_DIM, DEFAULT_MECH_DIM};
use crate::par::{self, Execution};
use crate::propagation::{block_frame_phase, propagate_effective, propagate_exact, CavityBlockPropagator, PropagationConfig};
use crate::schedule::build_pattern;

pub const REPORT_SCHEMA: &str = "optoprep.report/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationProblem {
    pub target: TargetState,
    pub n_blocks: usize,
    pub eta_max: f64,
    pub k: f64,
    pub seed: u64,
    pub restarts: usize,
    pub cavity_dim: usize,
    /// Objective evaluations allowed per restart.
    pub max_evaluations: usize,
    /// A restart stops once re-initializing the simplex at its best point
    /// improves the objective by less than this.
    pub tolerance: f64,
    /// Mechanical truncation of the post-hoc exact replay; 0 skips it.
    pub exact_mech_dim: usize,
    pub execution: Execution,
}

impl OptimizationProblem {
    pub fn new(target: TargetState, n_blocks: usize, eta_max: f64, k: f64) -> Self {
        Self {
            target,
            n_blocks,
            eta_max,
            k,
            seed: 0,
            restarts: 8,
            cavity_dim: DEFAULT_CAVITY_DIM,
            max_evaluations: 50_000,
            tolerance: 1e-6,
            exact_mech_dim: DEFAULT_MECH_DIM,
            execution: Execution::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_blocks == 0 {
            return Err(Error::InvalidParameter("n_blocks must be at least 1".into()));
        }
        if !(self.eta_max >= 0.0 && self.eta_max.is_finite()) {
            return Err(Error::InvalidParameter(format!("eta_max = {} must be finite and non-negative", self.eta_max)));
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return Err(Error::InvalidParameter(format!("k = {} must lie in (0, 1)", self.k)));
        }
        if self.restarts == 0 || self.max_evaluations == 0 {
            return Err(Error::InvalidParameter("restarts and max_evaluations must be positive".into()));
        }
        if self.cavity_dim < 3 {
            return Err(Error::InvalidDimension("cavity_dim must be at least 3".into()));
        }
        Ok(())
    }

    fn check_bounds(&self, amplitudes: &[f64]) -> Result<()> {
        if amplitudes.len() != self.n_blocks {
            return Err(Error::InvalidParameter(format!("{} amplitudes for {} blocks", amplitudes.len(), self.n_blocks)));
        }
        if let Some((j, &e)) = amplitudes.iter().enumerate().find(|(_, &e)| !(0.0..=self.eta_max).contains(&e)) {
            return Err(Error::ConstraintViolation(format!("amplitude {j} = {e} outside [0, {}]", self.eta_max)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizationReport {
    pub schema: String,
    pub problem: OptimizationProblem,
    pub best_amplitudes: Vec<f64>,
    pub best_theta: Option<f64>,
    /// Best objective after every simplex cycle of the winning restart.
    pub objective_trace: Vec<f64>,
    /// Final objective of every restart, in restart order.
    pub restart_objectives: Vec<f64>,
    pub best_restart: usize,
    pub evaluations: usize,
    pub achieved_fidelity_order2: f64,
    pub achieved_fidelity_exact: Option<f64>,
}

impl OptimizationReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(s)?;
        if r.schema != REPORT_SCHEMA {
            return Err(Error::Contract(format!("unknown report schema {}", r.schema)));
        }
        r.problem.check_bounds(&r.best_amplitudes)?;
        Ok(r)
    }

    pub fn system_params(&self) -> Result<SystemParams> {
        SystemParams::new(self.problem.k, FockSpace::new(self.problem.cavity_dim, self.problem.exact_mech_dim.max(1))?)
    }
}

/// Order-2 fidelity evaluator on the even cavity sector, starting from
/// `|0⟩`. The state is put into the physical frame before comparison.
struct Evaluator {
    k: f64,
    dim: usize,
    target: TargetState,
}

impl Evaluator {
    fn new(problem: &OptimizationProblem) -> Self {
        Self { k: problem.k, dim: problem.cavity_dim, target: problem.target }
    }

    fn fidelity(&self, amplitudes: &[f64], cache: &mut HashMap<u64, CavityBlockPropagator>) -> (f64, Option<f64>) {
        let mut v = vec![C64::new(0.0, 0.0); self.dim];
        v[0] = C64::new(1.0, 0.0);
        let mut phi = 0.0;
        for &eta in amplitudes {
            let prop = cache.entry(eta.to_bits()).or_insert_with(|| CavityBlockPropagator::even_only(eta, self.k, self.dim));
            prop.apply(&mut v);
            phi += block_frame_phase(eta, self.k);
        }
        let phase = frame_phase_diagonal(phi, self.dim);
        v.iter_mut().zip(&phase).for_each(|(x, p)| *x *= p);
        // only ρ₀₀, ρ₂₂ and ρ₀₂ (or ρ_nn) enter the fidelity
        let m = self.fock_dim();
        let rho = nalgebra::DMatrix::from_fn(m, m, |i, j| v[i] * v[j].conj());
        target_fidelity(&rho, &self.target).unwrap_or((0.0, None))
    }

    fn fock_dim(&self) -> usize {
        match self.target {
            TargetState::Fock { n } => (n + 1).min(self.dim),
            TargetState::Superposition { .. } => 3,
        }
    }

    fn objective(&self, amplitudes: &[f64], cache: &mut HashMap<u64, CavityBlockPropagator>) -> f64 {
        // keep the cache from growing without bound during long searches
        if cache.len() > 4096 {
            cache.clear();
        }
        1.0 - self.fidelity(amplitudes, cache).0
    }
}

/// `1 − F` of the order-2 cavity propagation from `|0⟩`.
pub fn objective(amplitudes: &[f64], problem: &OptimizationProblem) -> Result<f64> {
    problem.validate()?;
    problem.check_bounds(amplitudes)?;
    Ok(Evaluator::new(problem).objective(amplitudes, &mut HashMap::new()))
}

struct RestartOutcome {
    x: Vec<f64>,
    f: f64,
    trace: Vec<f64>,
    evaluations: usize,
}

fn clamp_box(x: &mut [f64], hi: f64) {
    x.iter_mut().for_each(|v| *v = v.clamp(0.0, hi));
}

/// One Nelder–Mead descent with points projected onto the box. Returns
/// when the simplex has collapsed or the budget is spent.
fn nelder_mead(f: &mut dyn FnMut(&[f64]) -> f64, x0: &[f64], hi: f64, step: f64, budget: usize) -> (Vec<f64>, f64, usize) {
    let n = x0.len();
    let (alpha, gamma, rho, sigma) = (1.0, 2.0, 0.5, 0.5);
    let mut evals = 0usize;
    let mut eval = |x: &[f64], evals: &mut usize| {
        *evals += 1;
        f(x)
    };
    let mut pts: Vec<Vec<f64>> = vec![x0.to_vec()];
    for i in 0..n {
        let mut p = x0.to_vec();
        p[i] = if p[i] + step <= hi { p[i] + step } else { p[i] - step };
        clamp_box(&mut p, hi);
        pts.push(p);
    }
    let mut vals: Vec<f64> = pts.iter().map(|p| eval(p, &mut evals)).collect();
    while evals < budget {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b)));
        pts = order.iter().map(|&i| pts[i].clone()).collect();
        vals = order.iter().map(|&i| vals[i]).collect();
        let spread = vals[n] - vals[0];
        let size = pts.iter().skip(1).map(|p| p.iter().zip(&pts[0]).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)).fold(0.0, f64::max);
        if spread <= 1e-12 * (1.0 + vals[0].abs()) || size < 1e-9 * hi.max(1e-300) {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|j| pts[..n].iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> {
            let mut p: Vec<f64> = centroid.iter().zip(&pts[n]).map(|(c, w)| c + t * (c - w)).collect();
            clamp_box(&mut p, hi);
            p
        };
        let xr = along(alpha);
        let fr = eval(&xr, &mut evals);
        if fr < vals[0] {
            let xe = along(gamma);
            let fe = eval(&xe, &mut evals);
            if fe < fr {
                pts[n] = xe;
                vals[n] = fe;
            } else {
                pts[n] = xr;
                vals[n] = fr;
            }
        } else if fr < vals[n - 1] {
            pts[n] = xr;
            vals[n] = fr;
        } else {
            let (xc, fc) = if fr < vals[n] {
                let xc = along(rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            } else {
                let xc = along(-rho);
                let fc = eval(&xc, &mut evals);
                (xc, fc)
            };
            if fc < vals[n].min(fr) {
                pts[n] = xc;
                vals[n] = fc;
            } else {
                for i in 1..=n {
                    let p: Vec<f64> = pts[0].iter().zip(&pts[i]).map(|(b, x)| b + sigma * (x - b)).collect();
                    vals[i] = eval(&p, &mut evals);
                    pts[i] = p;
                }
            }
        }
    }
    let best = (0..=n).min_by(|&a, &b| vals[a].total_cmp(&vals[b]).then(a.cmp(&b))).expect("non-empty simplex");
    (pts[best].clone(), vals[best], evals)
}

fn run_restart(problem: &OptimizationProblem, index: usize) -> RestartOutcome {
    let evaluator = Evaluator::new(problem);
    let mut cache = HashMap::new();
    let mut f = |x: &[f64]| evaluator.objective(x, &mut cache);
    let hi = problem.eta_max;
    let n = problem.n_blocks;
    if hi == 0.0 {
        let x = vec![0.0; n];
        let fx = f(&x);
        return RestartOutcome { x, f: fx, trace: vec![fx], evaluations: 1 };
    }
    let mut rng = ChaCha8Rng::seed_from_u64(problem.seed.wrapping_add(index as u64));
    let mut x: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..=hi)).collect();
    let mut fx = f(&x);
    let mut evaluations = 1;
    let mut trace = vec![fx];
    let mut step = 0.25 * hi;
    while evaluations < problem.max_evaluations {
        let (xn, fnew, used) = nelder_mead(&mut f, &x, hi, step, problem.max_evaluations - evaluations);
        evaluations += used;
        let gain = fx - fnew;
        if fnew < fx {
            x = xn;
            fx = fnew;
        }
        trace.push(fx);
        if gain < problem.tolerance {
            break;
        }
        step = (0.5 * step).max(0.02 * hi);
    }
    RestartOutcome { x, f: fx, trace, evaluations }
}

/// Multistart search. Restarts are independent and seeded by
/// `seed + index`; the winner is the lowest objective, ties going to the
/// lower index. The exact replay runs from `|0,0⟩` with default settings.
pub fn optimize(problem: &OptimizationProblem) -> Result<OptimizationReport> {
    problem.validate()?;
    let indices: Vec<usize> = (0..problem.restarts).collect();
    let outcomes = par::map(problem.execution, &indices, |_, &i| run_restart(problem, i));
    let best_restart = (0..outcomes.len())
        .min_by(|&a, &b| outcomes[a].f.total_cmp(&outcomes[b].f).then(a.cmp(&b)))
        .expect("at least one restart");
    let best = &outcomes[best_restart];
    let (f2, theta) = Evaluator::new(problem).fidelity(&best.x, &mut HashMap::new());
    let mut report = OptimizationReport {
        schema: REPORT_SCHEMA.to_string(),
        problem: problem.clone(),
        best_amplitudes: best.x.clone(),
        best_theta: theta,
        objective_trace: best.trace.clone(),
        restart_objectives: outcomes.iter().map(|o| o.f).collect(),
        best_restart,
        evaluations: outcomes.iter().map(|o| o.evaluations).sum(),
        achieved_fidelity_order2: f2,
        achieved_fidelity_exact: None,
    };
    if problem.exact_mech_dim > 0 {
        report.achieved_fidelity_exact = Some(exact_fidelity(&report, &PropagationConfig::default())?.0);
    }
    Ok(report)
}

/// Replays the report's amplitudes through the exact propagator from
/// `|0,0⟩`; returns the fidelity and its phase.
pub fn exact_fidelity(report: &OptimizationReport, config: &PropagationConfig) -> Result<(f64, Option<f64>)> {
    let params = report.system_params()?;
    let pattern = build_pattern(&report.best_amplitudes, &params, report.problem.eta_max)?;
    let initial = QuantumState::product_fock(params.space, 0, 0)?;
    let result = propagate_exact(&pattern, &initial, config)?;
    crate::metrics::fidelity_fn(&result, &report.problem.target)
}

/// Order-2 fidelity of the report through the generic effective propagator.
pub fn replay_order2(report: &OptimizationReport) -> Result<(f64, Option<f64>)> {
    let params = SystemParams::new(report.problem.k, FockSpace::new(report.problem.cavity_dim, 1)?)?;
    let mut v = DVector::zeros(report.problem.cavity_dim);
    v[0] = C64::new(1.0, 0.0);
    let init = QuantumState::pure(Space::Cavity(report.problem.cavity_dim), v)?;
    let r = propagate_effective(&report.best_amplitudes, &params, &init, Order::Second)?;
    crate::metrics::fidelity_fn(&r, &report.problem.target)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: f64,
    pub n_blocks: usize,
    /// Exact-dynamics fidelity when computed, otherwise the order-2 value.
    pub fidelity: f64,
    pub fidelity_order2: f64,
    pub fidelity_exact: Option<f64>,
    pub theta: Option<f64>,
    pub amplitudes: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
    /// `(n_blocks, k, fidelity)` of the best `k` per horizon.
    pub best_k: Vec<(usize, f64, f64)>,
}

/// Optimizes every `(k, horizon)` pair of the grids with the template's
/// other settings; grid points run concurrently. With `exact_mech_dim > 0`
/// points are ranked by their exact-dynamics fidelity, since the order-2
/// model alone keeps improving with `k`.
pub fn sweep_k(template: &OptimizationProblem, k_grid: &[f64], horizons: &[usize]) -> Result<SweepTable> {
    if k_grid.is_empty() || horizons.is_empty() {
        return Err(Error::InvalidParameter("k and horizon grids must be non-empty".into()));
    }
    let jobs: Vec<(f64, usize)> = horizons.iter().flat_map(|&h| k_grid.iter().map(move |&k| (k, h))).collect();
    let points: Vec<SweepPoint> = par::map(template.execution, &jobs, |_, &(k, n_blocks)| {
        let problem = OptimizationProblem { k, n_blocks, ..template.clone() };
        optimize(&problem).map(|r| SweepPoint {
            k,
            n_blocks,
            fidelity: r.achieved_fidelity_exact.unwrap_or(r.achieved_fidelity_order2),
            fidelity_order2: r.achieved_fidelity_order2,
            fidelity_exact: r.achieved_fidelity_exact,
            theta: r.best_theta,
            amplitudes: r.best_amplitudes,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;
    let best_k = horizons
        .iter()
        .map(|&h| {
            let best = points
                .iter()
                .filter(|p| p.n_blocks == h)
                .max_by(|a, b| a.fidelity.total_cmp(&b.fidelity).then(b.k.total_cmp(&a.k)))
                .expect("non-empty grid");
            (h, best.k, best.fidelity)
        })
        .collect();
    Ok(SweepTable { points, best_k })
}
