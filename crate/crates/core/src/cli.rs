//! Batch entry point: `optimize`, `simulate`, `noise-sweep`, `sweep-k` and
//! `verify`. Every command writes CSV tables with a versioned header line
//! and a JSON sidecar carrying the full configuration and its hash.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::dissipation::{mechanical_thermalization, optical_loss, Lindbladian};
use crate::error::{Error, Result};
use crate::fock::{thermal_state, FockSpace, QuantumState, Space};
use crate::io::{self, num, Sidecar};
use crate::metrics::{fidelity_fi, fidelity_fl, fidelity_fn, TargetState};
use crate::model::{Order, SystemParams, DEFAULT_CAVITY_DIM, DEFAULT_MECH_DIM};
use crate::optimizer::{optimize, sweep_k, OptimizationProblem, OptimizationReport};
use crate::par;
use crate::propagation::{
    propagate_effective, propagate_exact, propagate_lindblad, Integrator, PropagationConfig, SimulationResult, Splitting,
};
use crate::schedule::build_pattern;
use crate::verify::{run_all, VerifyConfig};

pub const NOISE_SCHEMA: &str = "optoprep.noise/1";
pub const SWEEP_K_SCHEMA: &str = "optoprep.sweep-k/1";
pub const VERIFY_SCHEMA: &str = "optoprep.verify/1";

#[derive(Parser, Debug)]
#[command(name = "optoprep", version, about = "Pulse optimization and simulation for optomechanical Fock-state preparation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Optimize block amplitudes and replay them with exact dynamics.
    Optimize(Flags),
    /// Propagate a stored pulse with one of the propagators.
    Simulate(Flags),
    /// Sweep thermal occupation, optical decay or mechanical damping.
    NoiseSweep(Flags),
    /// Optimize over a grid of coupling strengths and horizons.
    SweepK(Flags),
    /// Run the registered invariant checks.
    Verify(Flags),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum TargetKind {
    Fock2,
    Superposition,
}

impl TargetKind {
    pub fn state(self) -> TargetState {
        match self {
            TargetKind::Fock2 => TargetState::fock2(),
            TargetKind::Superposition => TargetState::superposition_free(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PropagatorChoice {
    Exact,
    Effective2,
    Effective3,
    Lindblad,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    Thermal,
    Kappa,
    Gamma,
}

/// Command-line flags. Every flag overrides the corresponding field of the
/// optional `--config` file.
#[derive(Args, Debug, Clone, Default)]
pub struct Flags {
    /// JSON experiment configuration; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Coupling k = g₀/ω_m; accepts fractions such as 1/26.
    #[arg(long, value_parser = parse_number)]
    pub k: Option<f64>,
    #[arg(long)]
    pub eta_max: Option<f64>,
    /// Protocol length in blocks of 5T.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long, value_enum)]
    pub target: Option<TargetKind>,
    /// Optical decay rates (comma separated, units of ω_m).
    #[arg(long, value_delimiter = ',', value_parser = parse_number)]
    pub kappa: Option<Vec<f64>>,
    /// Mechanical damping rates (comma separated, units of ω_m).
    #[arg(long, value_delimiter = ',', value_parser = parse_number)]
    pub gamma: Option<Vec<f64>>,
    /// Bath occupations for the damping sweep.
    #[arg(long, value_delimiter = ',', value_parser = parse_number)]
    pub nbar: Option<Vec<f64>>,
    /// Initial thermal phonon occupations.
    #[arg(long, value_delimiter = ',', value_parser = parse_number)]
    pub nth: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads (0 uses every core).
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub restarts: Option<usize>,
    /// Stored optimization reports (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub pulse: Option<Vec<PathBuf>>,
    #[arg(long, value_enum)]
    pub propagator: Option<PropagatorChoice>,
    #[arg(long, value_enum)]
    pub sweep: Option<NoiseKind>,
    /// Coupling grid for sweep-k (comma separated, fractions allowed).
    #[arg(long, value_delimiter = ',', value_parser = parse_number)]
    pub k_grid: Option<Vec<f64>>,
    /// Horizon grid for sweep-k (comma separated).
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long)]
    pub cavity_dim: Option<usize>,
    #[arg(long)]
    pub mech_dim: Option<usize>,
    #[arg(long)]
    pub omega_c_ratio: Option<u32>,
}

/// Parses a float or a fraction `a/b`.
pub fn parse_number(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    let v = match s.split_once('/') {
        Some((a, b)) => {
            let a: f64 = a.trim().parse().map_err(|e| format!("{s}: {e}"))?;
            let b: f64 = b.trim().parse().map_err(|e| format!("{s}: {e}"))?;
            a / b
        }
        None => s.parse().map_err(|e| format!("{s}: {e}"))?,
    };
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{s} is not a finite number"))
    }
}

/// Fully resolved configuration of one command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub k: f64,
    pub eta_max: f64,
    pub horizon: usize,
    pub target: TargetKind,
    pub seed: u64,
    pub restarts: usize,
    pub max_evaluations: usize,
    pub cavity_dim: usize,
    pub mech_dim: usize,
    pub omega_c_ratio: u32,
    pub kappa: Vec<f64>,
    pub gamma: Vec<f64>,
    pub nbar: Vec<f64>,
    pub nth: Vec<f64>,
    pub sweep: NoiseKind,
    /// Truncation of dissipative runs; the mechanical default depends on
    /// the sweep.
    pub noise_cavity_dim: usize,
    pub noise_mech_dim: Option<usize>,
    pub pulses: Vec<PathBuf>,
    pub propagator: PropagatorChoice,
    pub k_grid: Vec<f64>,
    pub horizons: Vec<usize>,
    pub record_stride: f64,
    pub steps_per_period: usize,
    pub integrator: Integrator,
    pub lindblad_steps_per_period: usize,
    pub splitting: Splitting,
    pub out: PathBuf,
    pub workers: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let prop = PropagationConfig::default();
        Self {
            k: 1.0 / 26.0,
            eta_max: 4.0,
            horizon: 16,
            target: TargetKind::Fock2,
            seed: 0,
            restarts: 8,
            max_evaluations: 50_000,
            cavity_dim: DEFAULT_CAVITY_DIM,
            mech_dim: DEFAULT_MECH_DIM,
            omega_c_ratio: 20,
            kappa: vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2],
            gamma: vec![1e-5, 1e-4, 1e-3, 1e-2],
            nbar: vec![1.0, 10.0, 100.0],
            nth: vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0],
            sweep: NoiseKind::Kappa,
            noise_cavity_dim: 20,
            noise_mech_dim: None,
            pulses: Vec::new(),
            propagator: PropagatorChoice::Exact,
            k_grid: (1..=6).map(|m| m as f64 / 52.0).collect(),
            horizons: vec![2, 5, 10, 16],
            record_stride: 0.0,
            steps_per_period: prop.steps_per_period,
            integrator: prop.integrator,
            lindblad_steps_per_period: prop.lindblad_steps_per_period,
            splitting: prop.splitting,
            out: PathBuf::from("out"),
            workers: 0,
        }
    }
}

impl ExperimentConfig {
    /// Loads the optional config file and applies flag overrides.
    pub fn resolve(flags: &Flags) -> Result<Self> {
        let mut c = match &flags.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::Usage(format!("cannot read config {}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| Error::Usage(format!("invalid config {}: {e}", p.display())))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($f:ident => $g:ident),*) => {$(if let Some(v) = flags.$f.clone() { c.$g = v; })*};
        }
        set!(k => k, eta_max => eta_max, horizon => horizon, target => target, kappa => kappa, gamma => gamma,
             nbar => nbar, nth => nth, seed => seed, out => out, workers => workers, restarts => restarts,
             pulse => pulses, propagator => propagator, sweep => sweep, k_grid => k_grid, horizons => horizons,
             cavity_dim => cavity_dim, mech_dim => mech_dim, omega_c_ratio => omega_c_ratio);
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let usage = |m: String| Err(Error::Usage(m));
        if self.horizon == 0 {
            return usage("--horizon must be at least 1 block".into());
        }
        if !(self.k > 0.0 && self.k < 1.0) {
            return usage(format!("--k = {} must lie in (0, 1)", self.k));
        }
        if !(self.eta_max >= 0.0) || !self.eta_max.is_finite() {
            return usage(format!("--eta-max = {} must be non-negative", self.eta_max));
        }
        if self.restarts == 0 {
            return usage("--restarts must be positive".into());
        }
        if self.cavity_dim < 3 || self.mech_dim < 1 || self.noise_cavity_dim < 3 {
            return usage("truncations too small".into());
        }
        for (name, v) in [("kappa", &self.kappa), ("gamma", &self.gamma), ("nbar", &self.nbar), ("nth", &self.nth)] {
            if v.iter().any(|x| !(*x >= 0.0)) {
                return usage(format!("--{name} values must be non-negative"));
            }
        }
        if self.k_grid.iter().any(|k| !(*k > 0.0 && *k < 1.0)) || self.horizons.contains(&0) {
            return usage("sweep grids need k in (0, 1) and horizons ≥ 1".into());
        }
        Ok(())
    }

    pub fn propagation(&self) -> PropagationConfig {
        PropagationConfig {
            steps_per_period: self.steps_per_period,
            record_stride: self.record_stride,
            integrator: self.integrator,
            lindblad_steps_per_period: self.lindblad_steps_per_period,
            splitting: self.splitting,
            ..PropagationConfig::default()
        }
    }

    pub fn problem(&self) -> OptimizationProblem {
        OptimizationProblem {
            seed: self.seed,
            restarts: self.restarts,
            max_evaluations: self.max_evaluations,
            cavity_dim: self.cavity_dim,
            exact_mech_dim: 0,
            ..OptimizationProblem::new(self.target.state(), self.horizon, self.eta_max, self.k)
        }
    }

    fn space(&self) -> Result<FockSpace> {
        FockSpace::new(self.cavity_dim, self.mech_dim)
    }

    /// Mechanical truncation for a noise sweep.
    pub fn noise_mech_dim(&self) -> usize {
        self.noise_mech_dim.unwrap_or(match self.sweep {
            NoiseKind::Thermal => 30,
            NoiseKind::Kappa => 6,
            NoiseKind::Gamma => 12,
        })
    }
}

/// Target of a stored pulse with the phase fixed to its optimum.
pub fn report_target(report: &OptimizationReport) -> TargetState {
    match report.best_theta {
        Some(th) => report.problem.target.with_theta(th),
        None => report.problem.target,
    }
}

/// One noisy run of a stored pulse.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoisePoint {
    pub kind: NoiseKind,
    pub value: f64,
    pub n_bar: f64,
    pub f_l: f64,
    pub f_i: f64,
    pub leakage_flagged: bool,
}

/// A stored pulse with its lossless order-3 reference on a truncation.
pub struct NoiseCurve {
    pub report: OptimizationReport,
    pub params: SystemParams,
    pub reference: SimulationResult,
}

pub fn load_curve(report: OptimizationReport, cavity_dim: usize, mech_dim: usize) -> Result<NoiseCurve> {
    let params = SystemParams::new(report.problem.k, FockSpace::new(cavity_dim, mech_dim)?)?;
    let init = QuantumState::product_fock(params.space, 0, 0)?;
    let reference = propagate_effective(&report.best_amplitudes, &params, &init, Order::Third)?;
    Ok(NoiseCurve { report, params, reference })
}

/// `F_l` against the pulse's target and `F_i` against its lossless
/// reference for one noise setting.
pub fn noise_point(curve: &NoiseCurve, kind: NoiseKind, value: f64, n_bar: f64, config: &PropagationConfig) -> Result<NoisePoint> {
    let fs = curve.params.space;
    let space = Space::Composite(fs);
    let vacuum = QuantumState::product_fock(fs, 0, 0)?;
    let (initial, lindbladian): (QuantumState, Lindbladian) = match kind {
        NoiseKind::Thermal => {
            let cav = QuantumState::fock(Space::Cavity(fs.cavity_dim), 0)?;
            let mech = thermal_state(value, fs.mech_dim)?.state;
            (QuantumState::product(&cav, &mech)?, Lindbladian::empty(space))
        }
        NoiseKind::Kappa => (vacuum, optical_loss(value, space)?),
        NoiseKind::Gamma => (vacuum, mechanical_thermalization(value, n_bar, curve.params.k, fs)?),
    };
    let pattern = build_pattern(&curve.report.best_amplitudes, &curve.params, curve.report.problem.eta_max)?;
    let cfg = PropagationConfig { store_states: false, ..config.clone() };
    let noisy = propagate_lindblad(&pattern, &initial, &lindbladian, &cfg)?;
    let target = report_target(&curve.report);
    Ok(NoisePoint {
        kind,
        value,
        n_bar,
        f_l: fidelity_fl(&noisy, &target)?.0,
        f_i: fidelity_fi(&curve.reference, &noisy)?,
        leakage_flagged: noisy.leakage_flagged,
    })
}

fn out_path(c: &ExperimentConfig, name: &str) -> Result<PathBuf> {
    Ok(io::ensure_dir(&c.out)?.join(name))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Optimizes, writes the report and pattern, and replays the optimum with
/// exact dynamics into a trajectory table.
pub fn cmd_optimize(c: &ExperimentConfig) -> Result<OptimizationReport> {
    let problem = c.problem();
    let mut report = optimize(&problem)?;
    report.problem.exact_mech_dim = c.mech_dim;
    let params = SystemParams::new(c.k, c.space()?)?.with_omega_c_ratio(c.omega_c_ratio)?;
    let pattern = build_pattern(&report.best_amplitudes, &params, c.eta_max)?;
    let init = QuantumState::product_fock(params.space, 0, 0)?;
    let exact = propagate_exact(&pattern, &init, &c.propagation())?;
    let (f_exact, theta_exact) = fidelity_fn(&exact, &report.problem.target)?;
    report.achieved_fidelity_exact = Some(f_exact);

    let report_path = out_path(c, "report.json")?;
    std::fs::write(&report_path, report.to_json()?)?;
    let pattern_path = out_path(c, "pattern.json")?;
    std::fs::write(&pattern_path, pattern.to_json()?)?;
    let traj_path = out_path(c, "trajectory.csv")?;
    io::write_trajectory(&traj_path, &exact, Some(&report_target(&report)))?;

    let mut side = Sidecar::new("optimize", c)?;
    side.outputs = [&report_path, &pattern_path, &traj_path].iter().map(|p| file_name(p)).collect();
    side.results = serde_json::json!({
        "fidelity_order2": report.achieved_fidelity_order2,
        "fidelity_exact": f_exact,
        "theta_order2": report.best_theta,
        "theta_exact": theta_exact,
        "evaluations": report.evaluations,
        "leakage": exact.leakage,
        "problem_hash": io::config_hash(&report.problem)?,
        "pattern_hash": io::config_hash(&pattern)?,
    });
    side.warnings = exact.warnings.clone();
    side.write(&out_path(c, "trajectory.json")?)?;
    log::info!("optimize: order-2 F = {:.5}, exact F_n = {:.5}", report.achieved_fidelity_order2, f_exact);
    Ok(report)
}

fn single_pulse(c: &ExperimentConfig) -> Result<OptimizationReport> {
    match c.pulses.as_slice() {
        [p] => io::read_report(p),
        [] => Err(Error::Usage("--pulse <report.json> is required".into())),
        _ => Err(Error::Usage("simulate takes exactly one --pulse".into())),
    }
}

/// Propagates a stored pulse and writes its trajectory.
pub fn cmd_simulate(c: &ExperimentConfig) -> Result<SimulationResult> {
    let report = single_pulse(c)?;
    let target = report_target(&report);
    let cfg = c.propagation();
    let result = match c.propagator {
        PropagatorChoice::Effective2 => {
            let params = SystemParams::new(report.problem.k, FockSpace::new(c.cavity_dim, 1)?)?;
            let init = QuantumState::fock(Space::Cavity(c.cavity_dim), 0)?;
            propagate_effective(&report.best_amplitudes, &params, &init, Order::Second)?
        }
        PropagatorChoice::Effective3 => {
            let params = SystemParams::new(report.problem.k, c.space()?)?;
            let init = QuantumState::product_fock(params.space, 0, 0)?;
            propagate_effective(&report.best_amplitudes, &params, &init, Order::Third)?
        }
        PropagatorChoice::Exact => {
            let params = SystemParams::new(report.problem.k, c.space()?)?.with_omega_c_ratio(c.omega_c_ratio)?;
            let pattern = build_pattern(&report.best_amplitudes, &params, report.problem.eta_max)?;
            propagate_exact(&pattern, &QuantumState::product_fock(params.space, 0, 0)?, &cfg)?
        }
        PropagatorChoice::Lindblad => {
            let curve = load_curve(report.clone(), c.noise_cavity_dim, c.noise_mech_dim())?;
            let fs = curve.params.space;
            let l = optical_loss(c.kappa.first().copied().unwrap_or(0.0), Space::Composite(fs))?.combine(
                mechanical_thermalization(
                    c.gamma.first().copied().unwrap_or(0.0),
                    c.nbar.first().copied().unwrap_or(0.0),
                    curve.params.k,
                    fs,
                )?,
            )?;
            let n_th = c.nth.first().copied().unwrap_or(0.0);
            let init = QuantumState::product(
                &QuantumState::fock(Space::Cavity(fs.cavity_dim), 0)?,
                &thermal_state(n_th, fs.mech_dim)?.state,
            )?;
            let pattern = build_pattern(&report.best_amplitudes, &curve.params, report.problem.eta_max)?;
            propagate_lindblad(&pattern, &init, &l, &cfg)?
        }
    };
    let (f, theta) = fidelity_fn(&result, &target)?;
    let traj_path = out_path(c, "simulation.csv")?;
    io::write_trajectory(&traj_path, &result, Some(&target))?;
    let mut side = Sidecar::new("simulate", c)?;
    side.outputs = vec![file_name(&traj_path)];
    side.results = serde_json::json!({
        "propagator": c.propagator,
        "fidelity": f,
        "theta": theta,
        "leakage": result.leakage,
        "trace_drift": result.trace_drift,
        "pulse_hash": io::config_hash(&report)?,
    });
    side.warnings = result.warnings.clone();
    side.write(&out_path(c, "simulation.json")?)?;
    Ok(result)
}

/// Sweeps one noise parameter for every stored pulse.
pub fn cmd_noise_sweep(c: &ExperimentConfig) -> Result<Vec<(usize, NoisePoint)>> {
    if c.pulses.is_empty() {
        return Err(Error::Usage("noise-sweep needs at least one --pulse <report.json>".into()));
    }
    let reports: Vec<OptimizationReport> = c.pulses.iter().map(|p| io::read_report(p)).collect::<Result<_>>()?;
    let curves: Vec<NoiseCurve> =
        reports.into_iter().map(|r| load_curve(r, c.noise_cavity_dim, c.noise_mech_dim())).collect::<Result<_>>()?;
    let grid: Vec<(f64, f64)> = match c.sweep {
        NoiseKind::Thermal => c.nth.iter().map(|&v| (v, 0.0)).collect(),
        NoiseKind::Kappa => c.kappa.iter().map(|&v| (v, 0.0)).collect(),
        NoiseKind::Gamma => c.nbar.iter().flat_map(|&nb| c.gamma.iter().map(move |&g| (g, nb))).collect(),
    };
    let jobs: Vec<(usize, f64, f64)> =
        (0..curves.len()).flat_map(|i| grid.iter().map(move |&(v, nb)| (i, v, nb))).collect();
    let cfg = c.propagation();
    let points: Vec<(usize, NoisePoint)> = par::map(cfg.execution, &jobs, |_, &(i, v, nb)| {
        noise_point(&curves[i], c.sweep, v, nb, &cfg).map(|p| (i, p))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let header: Vec<String> =
        ["curve", "k", "horizon", "parameter", "value", "n_bar", "F_l", "F_i", "leakage_flag"].map(String::from).to_vec();
    let kind = match c.sweep {
        NoiseKind::Thermal => "n_th",
        NoiseKind::Kappa => "kappa",
        NoiseKind::Gamma => "gamma",
    };
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|(i, p)| {
            let r = &curves[*i].report;
            vec![
                i.to_string(),
                num(r.problem.k),
                r.problem.n_blocks.to_string(),
                kind.to_string(),
                num(p.value),
                num(p.n_bar),
                num(p.f_l),
                num(p.f_i),
                (p.leakage_flagged as u8).to_string(),
            ]
        })
        .collect();
    let table = out_path(c, &format!("noise_{kind}.csv"))?;
    io::write_table(&table, NOISE_SCHEMA, &header, &rows)?;
    let mut side = Sidecar::new("noise-sweep", c)?;
    side.outputs = vec![file_name(&table)];
    side.results = serde_json::json!({
        "pulse_hashes": curves.iter().map(|cv| io::config_hash(&cv.report)).collect::<Result<Vec<_>>>()?,
        "lossless_fidelities": curves.iter().map(|cv| fidelity_fn(&cv.reference, &report_target(&cv.report)).map(|f| f.0)).collect::<Result<Vec<_>>>()?,
        "mech_dim": c.noise_mech_dim(),
    });
    if points.iter().any(|(_, p)| p.leakage_flagged) {
        side.warnings.push("some runs exceed the truncation leakage threshold".into());
    }
    side.write(&out_path(c, &format!("noise_{kind}.json"))?)?;
    Ok(points)
}

pub fn cmd_sweep_k(c: &ExperimentConfig) -> Result<crate::optimizer::SweepTable> {
    let template = OptimizationProblem { exact_mech_dim: c.mech_dim, ..c.problem() };
    let table = sweep_k(&template, &c.k_grid, &c.horizons)?;
    let header: Vec<String> =
        ["k", "inv_k", "horizon", "fidelity", "fidelity_order2", "fidelity_exact", "theta"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = table
        .points
        .iter()
        .map(|p| {
            vec![
                num(p.k),
                num(1.0 / p.k),
                p.n_blocks.to_string(),
                num(p.fidelity),
                num(p.fidelity_order2),
                p.fidelity_exact.map(num).unwrap_or_default(),
                p.theta.map(num).unwrap_or_default(),
            ]
        })
        .collect();
    let path = out_path(c, "sweep_k.csv")?;
    io::write_table(&path, SWEEP_K_SCHEMA, &header, &rows)?;
    let mut side = Sidecar::new("sweep-k", c)?;
    side.outputs = vec![file_name(&path)];
    side.results = serde_json::to_value(&table)?;
    side.write(&out_path(c, "sweep_k.json")?)?;
    Ok(table)
}

/// Runs the invariant checks; any failure is reported as an error after
/// the table is written.
pub fn cmd_verify(c: &ExperimentConfig) -> Result<Vec<crate::verify::Check>> {
    let vc = VerifyConfig { omega_c_ratio: c.omega_c_ratio, ..VerifyConfig::default() };
    let checks = run_all(&vc);
    let header: Vec<String> = ["check", "passed", "residual", "threshold", "detail"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|k| vec![k.name.clone(), k.passed.to_string(), num(k.residual), num(k.threshold), k.detail.clone()])
        .collect();
    let path = out_path(c, "verify.csv")?;
    io::write_table(&path, VERIFY_SCHEMA, &header, &rows)?;
    let mut side = Sidecar::new("verify", &vc)?;
    side.outputs = vec![file_name(&path)];
    side.results = serde_json::to_value(&checks)?;
    side.write(&out_path(c, "verify.json")?)?;
    for k in &checks {
        println!("{:<30} {:<4} residual {:.3e} (threshold {:.1e}) {}", k.name, if k.passed { "ok" } else { "FAIL" }, k.residual, k.threshold, k.detail);
    }
    let failed = checks.iter().filter(|k| !k.passed).count();
    if failed > 0 {
        return Err(Error::Accuracy(format!("{failed} invariant check(s) failed")));
    }
    Ok(checks)
}

fn dispatch(cli: Cli) -> Result<()> {
    let (flags, run): (Flags, fn(&ExperimentConfig) -> Result<()>) = match cli.command {
        Command::Optimize(f) => (f, |c| cmd_optimize(c).map(|_| ())),
        Command::Simulate(f) => (f, |c| cmd_simulate(c).map(|_| ())),
        Command::NoiseSweep(f) => (f, |c| cmd_noise_sweep(c).map(|_| ())),
        Command::SweepK(f) => (f, |c| cmd_sweep_k(c).map(|_| ())),
        Command::Verify(f) => (f, |c| cmd_verify(c).map(|_| ())),
    };
    let config = ExperimentConfig::resolve(&flags)?;
    par::with_workers(config.workers, || run(&config))
}

/// Parses arguments, runs the command and maps errors to exit codes
/// (2 for usage errors, 1 otherwise).
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ Error::Usage(_)) => {
            eprintln!("{e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
