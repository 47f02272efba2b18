//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails. `ACCEPTANCE_ONLY=1,5,9` restricts the run.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use optoprep::cli::{load_curve, noise_point, NoiseCurve, NoiseKind};
use optoprep::dissipation::{optical_loss, Lindbladian};
use optoprep::fock::{FockSpace, QuantumState, Space};
use optoprep::metrics::{fidelity_fi, fidelity_fn, odd_even_split, TargetState};
use optoprep::model::{Order, SystemParams};
use optoprep::optimizer::{optimize, sweep_k, OptimizationProblem, OptimizationReport, SweepPoint};
use optoprep::propagation::{propagate_effective, propagate_exact, propagate_lindblad, PropagationConfig, SimulationResult};
use optoprep::schedule::build_pattern;
use optoprep::verify::{block_vacuum_error, half_period_numeric_residual, log_log_slope, magnus_first_residual, magnus_second_residual};

const ETA_MAX: f64 = 4.0;
/// Truncation of the exact replays.
const EXACT_DIMS: (usize, usize) = (60, 15);
/// Truncation of the dissipative runs: cavity levels, then phonon levels
/// for thermal, optical and damping sweeps.
const NOISE_CAVITY: usize = 20;
const NOISE_MECH: (usize, usize, usize) = (30, 6, 10);

struct Run {
    selected: Option<Vec<u32>>,
    outcomes: Vec<(u32, bool)>,
}

impl Run {
    fn wants(&self, id: u32) -> bool {
        self.selected.as_ref().is_none_or(|s| s.contains(&id))
    }

    fn record(&mut self, id: u32, name: &str, passed: bool, detail: String, took: Duration) {
        println!("{} [{id}] {name}: {detail} ({:.1} s)", if passed { "PASS" } else { "FAIL" }, took.as_secs_f64());
        self.outcomes.push((id, passed));
    }
}

fn problem(target: TargetState, n_blocks: usize, k: f64) -> OptimizationProblem {
    OptimizationProblem { restarts: 2, exact_mech_dim: 0, ..OptimizationProblem::new(target, n_blocks, ETA_MAX, k) }
}

fn exact_replay(report: &OptimizationReport) -> SimulationResult {
    let params = SystemParams::new(report.problem.k, FockSpace::new(EXACT_DIMS.0, EXACT_DIMS.1).unwrap()).unwrap();
    let pattern = build_pattern(&report.best_amplitudes, &params, ETA_MAX).unwrap();
    let init = QuantumState::product_fock(params.space, 0, 0).unwrap();
    propagate_exact(&pattern, &init, &PropagationConfig::default()).unwrap()
}

/// An optimized pulse with its exact replay.
struct Pulse {
    report: OptimizationReport,
    exact: SimulationResult,
    f_n: f64,
    theta: Option<f64>,
    took: Duration,
}

fn pulse(target: TargetState, n_blocks: usize, k: f64) -> Pulse {
    let t = Instant::now();
    let report = optimize(&problem(target, n_blocks, k)).unwrap();
    let exact = exact_replay(&report);
    let (f_n, theta) = fidelity_fn(&exact, &target).unwrap();
    Pulse { report, exact, f_n, theta, took: t.elapsed() }
}

fn wrapped_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

fn main() {
    let selected = std::env::var("ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect::<Vec<u32>>());
    let mut run = Run { selected, outcomes: Vec::new() };
    let k26 = 1.0 / 26.0;
    let needs_fock16 = [1, 4, 8, 10].iter().any(|&i| run.wants(i));

    // 1. Fock-state benchmark
    let fock16 = needs_fock16.then(|| pulse(TargetState::fock2(), 16, k26));
    if let Some(p) = fock16.as_ref().filter(|_| run.wants(1)) {
        let ok = p.f_n >= 0.99 && p.took <= Duration::from_secs(1800);
        let detail = format!(
            "k=1/26, 16 blocks: F_n = {:.5} (order 2: {:.5}, {} restarts, {} evaluations)",
            p.f_n, p.report.achieved_fidelity_order2, p.report.problem.restarts, p.report.evaluations
        );
        run.record(1, "Fock-state benchmark F_n >= 0.99 within 30 min", ok, detail, p.took);
    }

    // 2. Superposition benchmark
    if run.wants(2) {
        let p = pulse(TargetState::superposition_free(), 10, k26);
        let theta = p.theta.unwrap();
        let ok = p.f_n >= 0.99 && wrapped_distance(theta, -1.86) <= 0.3;
        let detail = format!("F_n = {:.5}, theta = {theta:.3} (order-2 theta {:.3})", p.f_n, p.report.best_theta.unwrap());
        run.record(2, "Superposition benchmark F_n >= 0.99, theta within 0.3 of -1.86", ok, detail, p.took);
    }

    // 3. Fixed-k penalty at 10T; the per-horizon optimum is searched on a
    // local grid around k = 1/21.
    let mut curve_ii = None;
    if run.wants(3) || run.wants(10) {
        let t = Instant::now();
        let fixed = pulse(TargetState::fock2(), 10, k26);
        let best = [23.0, 21.0, 19.0]
            .iter()
            .map(|inv| pulse(TargetState::fock2(), 10, 1.0 / inv))
            .max_by(|a, b| a.f_n.total_cmp(&b.f_n))
            .unwrap();
        let ok = (fixed.f_n - 0.836).abs() <= 0.03 && best.f_n >= 0.985;
        let detail = format!(
            "k=1/26: F_n = {:.5}; best k = 1/{:.0}: F_n = {:.5}",
            fixed.f_n,
            1.0 / best.report.problem.k,
            best.f_n
        );
        if run.wants(3) {
            run.record(3, "Fixed-k penalty 0.836 +- 0.03 vs >= 0.985 at optimal k", ok, detail, t.elapsed());
        }
        curve_ii = Some(best.report);
    }

    // 4. Optimal-k trend on the 1/52 grid, ranked by exact fidelity. The
    // 16T point at k = 2/52 is the benchmark-1 run; k = 1/52 is skipped
    // there since it lies within one step of 1/26 either way.
    if run.wants(4) {
        let t = Instant::now();
        let template = OptimizationProblem { exact_mech_dim: EXACT_DIMS.1, ..problem(TargetState::fock2(), 5, k26) };
        let grid = |ms: &[u32]| ms.iter().map(|&m| m as f64 / 52.0).collect::<Vec<_>>();
        let short = sweep_k(&template, &grid(&[1, 2, 3, 4, 5, 6]), &[5]).unwrap();
        let long = sweep_k(&template, &grid(&[3, 4, 5]), &[16]).unwrap();
        let p1 = fock16.as_ref().unwrap();
        let mut long_points: Vec<SweepPoint> = long.points.clone();
        long_points.push(SweepPoint {
            k: 2.0 / 52.0,
            n_blocks: 16,
            fidelity: p1.f_n,
            fidelity_order2: p1.report.achieved_fidelity_order2,
            fidelity_exact: Some(p1.f_n),
            theta: None,
            amplitudes: p1.report.best_amplitudes.clone(),
        });
        long_points.sort_by(|a, b| a.k.total_cmp(&b.k));
        let argmax = |pts: &[SweepPoint]| pts.iter().max_by(|a, b| a.fidelity.total_cmp(&b.fidelity)).unwrap().k;
        let (k5, k16) = (argmax(&short.points), argmax(&long_points));
        let step = 1.0 / 52.0 + 1e-12;
        let ok = (k5 - 1.0 / 16.0).abs() <= step && (k16 - k26).abs() <= step;
        let table = |pts: &[SweepPoint]| {
            pts.iter().map(|p| format!("{:.0}:{:.3}", p.k * 52.0, p.fidelity)).collect::<Vec<_>>().join(" ")
        };
        let detail = format!(
            "argmax 5T k = {:.0}/52 [{}], 16T k = {:.0}/52 [{}]",
            k5 * 52.0,
            table(&short.points),
            k16 * 52.0,
            table(&long_points)
        );
        run.record(4, "Optimal-k trend within one 1/52 step of 1/16 (5T) and 1/26 (16T)", ok, detail, t.elapsed());
    }

    // 5. Magnus oracle
    if run.wants(5) {
        let t = Instant::now();
        let mut worst = (0.0f64, 0.0f64);
        for (eta, psi) in [(0.0, 0.0), (4.0, 0.0), (4.0, PI / 3.0)] {
            worst.0 = worst.0.max(magnus_first_residual(eta, psi, k26).unwrap());
            worst.1 = worst.1.max(magnus_second_residual(eta, psi, k26).unwrap());
        }
        let ok = worst.0 < 1e-6 && worst.1 < 1e-4;
        let detail = format!("worst first-term residual {:.2e}, second-term relative error {:.2e}", worst.0, worst.1);
        run.record(5, "Magnus oracle equivalence", ok, detail, t.elapsed());
    }

    // 6. Half-period adjoint identity
    if run.wants(6) {
        let t = Instant::now();
        let r: Vec<f64> = [16.0, 26.0].iter().map(|inv| half_period_numeric_residual(1.0 / inv, 20).unwrap()).collect();
        let ok = r.iter().all(|&x| x < 1e-10);
        run.record(6, "Half-period adjoint identity < 1e-10", ok, format!("k=1/16: {:.2e}, k=1/26: {:.2e}", r[0], r[1]), t.elapsed());
    }

    // 7. Order scaling
    if run.wants(7) {
        let t = Instant::now();
        let ks = [1.0 / 13.0, 1.0 / 26.0, 1.0 / 52.0];
        let space = FockSpace::new(EXACT_DIMS.0, EXACT_DIMS.1).unwrap();
        let errs: Vec<f64> =
            ks.iter().map(|&k| block_vacuum_error(k, 4.0, space, &PropagationConfig::default()).unwrap()).collect();
        let slope = log_log_slope(&ks, &errs);
        let detail = format!("slope {slope:.3} from errors {:.3e}, {:.3e}, {:.3e}", errs[0], errs[1], errs[2]);
        run.record(7, "Block error slope 4 +- 0.5", (slope - 4.0).abs() <= 0.5, detail, t.elapsed());
    }

    // 8. Odd-population suppression, one snapshot per block
    if let Some(p) = fock16.as_ref().filter(|_| run.wants(8)) {
        let t = Instant::now();
        let ratios: Vec<(f64, f64)> = p.exact.cavity_populations.iter().map(|pops| odd_even_split(pops)).collect();
        let ok = ratios.iter().all(|&(odd, even)| 10.0 * odd <= even);
        let worst = ratios
            .iter()
            .filter(|(_, e)| *e > 0.0)
            .map(|(o, e)| o / e)
            .fold(0.0, f64::max);
        let detail = format!("{} snapshots, worst odd/even ratio {worst:.2e}", ratios.len());
        run.record(8, "Odd-Fock population 10x below even", ok, detail, t.elapsed());
    }

    // 9. Dissipative limits
    if run.wants(9) {
        let t = Instant::now();
        let params = SystemParams::new(k26, FockSpace::new(16, 6).unwrap()).unwrap();
        let amps = [4.0, 3.0, 2.0];
        let pattern = build_pattern(&amps, &params, ETA_MAX).unwrap();
        let init = QuantumState::product_fock(params.space, 0, 0).unwrap();
        let lossless = propagate_effective(&amps, &params, &init, Order::Third).unwrap();
        let space = Space::Composite(params.space);
        let cfg = PropagationConfig::default();
        let zero = propagate_lindblad(&pattern, &init, &Lindbladian::empty(space), &cfg).unwrap();
        // a vanishing but nonzero rate forces the split-step path
        let tiny = propagate_lindblad(&pattern, &init, &optical_loss(1e-14, space).unwrap(), &cfg).unwrap();
        let fi_zero = fidelity_fi(&lossless, &zero).unwrap();
        let fi_tiny = fidelity_fi(&lossless, &tiny).unwrap();
        let state_gap = (tiny.final_state.density() - lossless.final_state.density()).norm();

        let (kappa, time) = (1e-2, 50.0);
        let l = optical_loss(kappa, Space::Cavity(4)).unwrap();
        let mut rho = DMatrix::zeros(4, 4);
        rho[(1, 1)] = C64::new(1.0, 0.0);
        let decay_err = (l.evolve(&rho, time, cfg.execution)[(1, 1)].re - (-kappa * time).exp()).abs();
        let ok = (1.0 - fi_zero).abs() < 1e-4 && (1.0 - fi_tiny).abs() < 1e-4 && decay_err < 1e-6;
        let detail = format!(
            "F_i(zero) = 1 - {:.1e}, F_i(split-step) = 1 - {:.1e} (state gap {state_gap:.1e}), decay error {decay_err:.2e}",
            1.0 - fi_zero,
            1.0 - fi_tiny
        );
        run.record(9, "Dissipative limits", ok, detail, t.elapsed());
    }

    // 10. Noise thresholds and curve ordering
    if run.wants(10) {
        let t = Instant::now();
        let cfg = PropagationConfig::default();
        let reports = [
            fock16.as_ref().unwrap().report.clone(),
            curve_ii.clone().unwrap(),
            optimize(&problem(TargetState::fock2(), 5, 1.0 / 16.0)).unwrap(),
        ];
        let curves = |mech: usize| -> Vec<NoiseCurve> {
            reports.iter().map(|r| load_curve(r.clone(), NOISE_CAVITY, mech).unwrap()).collect()
        };
        let point = |c: &NoiseCurve, kind, v, nb| noise_point(c, kind, v, nb, &cfg).unwrap();

        let optical = curves(NOISE_MECH.1);
        let fl = |i: usize, kappa: f64| point(&optical[i], NoiseKind::Kappa, kappa, 0.0).f_l;
        let (low, high) = (fl(0, 1e-4), fl(0, 1e-3));
        let crossing = low >= 0.9 && high < 0.9;
        let small: Vec<f64> = (0..3).map(|i| fl(i, 1e-6)).collect();
        let large: Vec<f64> = (0..3).map(|i| fl(i, 1e-2)).collect();
        let faster_wins = small[0] > small[2] && large[2] > large[0];

        let damping = curves(NOISE_MECH.2);
        let fi_gamma = point(&damping[0], NoiseKind::Gamma, 1e-2, 1.0).f_i;

        let thermal = curves(NOISE_MECH.0);
        let drop: Vec<f64> = thermal.iter().map(|c| 1.0 - point(c, NoiseKind::Thermal, 1.0, 0.0).f_i).collect();
        let iii_most_sensitive = drop[2] > drop[0] && drop[2] > drop[1];

        let ok = crossing && fi_gamma > 0.95 && faster_wins && iii_most_sensitive;
        let detail = format!(
            "curve I F_l(1e-4) = {low:.4}, F_l(1e-3) = {high:.4}; F_i(gamma=1e-2, nb=1) = {fi_gamma:.4}; \
             F_l at kappa 1e-6 [{:.3} {:.3} {:.3}], 1e-2 [{:.3} {:.3} {:.3}]; 1 - F_i at n_th=1 [{:.2e} {:.2e} {:.2e}]",
            small[0], small[1], small[2], large[0], large[1], large[2], drop[0], drop[1], drop[2]
        );
        run.record(10, "Noise thresholds and curve ordering", ok, detail, t.elapsed());
    }

    let failed: Vec<u32> = run.outcomes.iter().filter(|(_, ok)| !ok).map(|(id, _)| *id).collect();
    println!("acceptance: {} passed, {} failed", run.outcomes.len() - failed.len(), failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
