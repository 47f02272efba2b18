use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use num_complex::Complex64 as C64;

use optoprep::dissipation::{mechanical_thermalization, optical_loss};
use optoprep::fock::{thermal_state, FockSpace, QuantumState, Space};
use optoprep::metrics::TargetState;
use optoprep::model::SystemParams;
use optoprep::optimizer::{optimize, OptimizationProblem};
use optoprep::par::Execution;
use optoprep::propagation::{propagate_exact, PropagationConfig};
use optoprep::schedule::build_pattern;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn multistart(c: &mut Criterion) {
    let mut g = c.benchmark_group("multistart_optimize");
    g.sample_size(10);
    for (name, execution) in MODES {
        let problem = OptimizationProblem {
            restarts: 4,
            max_evaluations: 1500,
            cavity_dim: 30,
            exact_mech_dim: 0,
            execution,
            ..OptimizationProblem::new(TargetState::fock2(), 4, 4.0, 1.0 / 16.0)
        };
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| optimize(black_box(&problem)).unwrap()));
    }
    g.finish();
}

fn dissipator(c: &mut Criterion) {
    let fs = FockSpace::new(20, 10).unwrap();
    let l = optical_loss(1e-3, Space::Composite(fs))
        .unwrap()
        .combine(mechanical_thermalization(1e-2, 1.0, 1.0 / 26.0, fs).unwrap())
        .unwrap();
    let d = fs.dim();
    let rho = DMatrix::from_fn(d, d, |i, j| C64::new(1.0 / (1.0 + (i + j) as f64), (i as f64 - j as f64) * 1e-3));
    let mut g = c.benchmark_group("lindblad_dissipator");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| l.evolve(black_box(&rho), 0.05, exec)));
    }
    g.finish();
}

fn thermal_ensemble(c: &mut Criterion) {
    let params = SystemParams::new(1.0 / 16.0, FockSpace::new(16, 8).unwrap()).unwrap();
    let pattern = build_pattern(&[3.0], &params, 4.0).unwrap();
    let init = QuantumState::product(
        &QuantumState::fock(Space::Cavity(16), 0).unwrap(),
        &thermal_state(0.5, 8).unwrap().state,
    )
    .unwrap();
    let mut g = c.benchmark_group("exact_thermal_ensemble");
    g.sample_size(10);
    for (name, execution) in MODES {
        let cfg = PropagationConfig { execution, store_states: false, ..PropagationConfig::default() };
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| propagate_exact(black_box(&pattern), &init, &cfg).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, multistart, dissipator, thermal_ensemble);
criterion_main!(benches);
