use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use proptest::prelude::*;

use optoprep::fock::{
    cavity_populations, fidelity, partial_trace_cavity, partial_trace_mech, thermal_state, FockSpace, QuantumState,
    Space,
};
use optoprep::metrics::{target_fidelity, TargetState};
use optoprep::model::SystemParams;
use optoprep::optimizer::{objective, OptimizationProblem};
use optoprep::schedule::{build_pattern, DrivingPattern};

fn amplitudes(len: usize) -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), len)
}

fn pure(space: Space, raw: &[(f64, f64)]) -> QuantumState {
    let v = DVector::from_iterator(raw.len(), raw.iter().map(|&(r, i)| C64::new(r, i)));
    QuantumState::pure_normalized(space, v).unwrap()
}

fn mixture(space: Space, raw: &[(f64, f64)], weights: &[f64]) -> QuantumState {
    let d = space.dim();
    let mut rho = DMatrix::zeros(d, d);
    let total: f64 = weights.iter().sum();
    for (chunk, w) in raw.chunks(d).zip(weights) {
        rho += pure(space, chunk).density() * C64::new(w / total, 0.0);
    }
    QuantumState::mixed(space, rho).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn partial_traces_preserve_trace_and_populations(raw in amplitudes(12).prop_filter("nonzero", |v| v.iter().any(|&(r, i)| r.abs() + i.abs() > 1e-3))) {
        let fs = FockSpace::new(4, 3).unwrap();
        let psi = pure(Space::Composite(fs), &raw);
        let cav = partial_trace_mech(&psi).unwrap();
        let mech = partial_trace_cavity(&psi).unwrap();
        prop_assert!((cav.trace() - 1.0).abs() < 1e-12);
        prop_assert!((mech.trace() - 1.0).abs() < 1e-12);
        let pops = cavity_populations(&psi).unwrap();
        for (a, b) in pops.iter().zip(cav.populations()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn fidelity_is_bounded_and_symmetric(raw in amplitudes(15), w in prop::collection::vec(0.01..1.0f64, 3), raw2 in amplitudes(5).prop_filter("nonzero", |v| v.iter().any(|&(r, i)| r.abs() + i.abs() > 1e-3))) {
        prop_assume!(raw.chunks(5).all(|c| c.iter().any(|&(r, i)| r.abs() + i.abs() > 1e-3)));
        let s = Space::Cavity(5);
        let rho = mixture(s, &raw, &w);
        let sigma = pure(s, &raw2);
        let f = fidelity(&rho, &sigma).unwrap();
        prop_assert!((-1e-12..=1.0 + 1e-9).contains(&f));
        prop_assert!((f - fidelity(&sigma, &rho).unwrap()).abs() < 1e-7);
        prop_assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn free_phase_fidelity_dominates_fixed_phase(raw in amplitudes(24), w in prop::collection::vec(0.01..1.0f64, 4), theta in -3.1..3.1f64) {
        prop_assume!(raw.chunks(6).all(|c| c.iter().any(|&(r, i)| r.abs() + i.abs() > 1e-3)));
        let rho = mixture(Space::Cavity(6), &raw, &w).density();
        let (free, best) = target_fidelity(&rho, &TargetState::superposition_free()).unwrap();
        let (fixed, _) = target_fidelity(&rho, &TargetState::Superposition { theta: Some(theta) }).unwrap();
        prop_assert!(free + 1e-12 >= fixed);
        let (again, _) = target_fidelity(&rho, &TargetState::Superposition { theta: best }).unwrap();
        prop_assert!((again - free).abs() < 1e-12);
    }

    #[test]
    fn thermal_mean_occupation(n_bar in 0.0..2.0f64) {
        let t = thermal_state(n_bar, 80).unwrap();
        let mean: f64 = t.state.populations().iter().enumerate().map(|(n, p)| n as f64 * p).sum();
        prop_assert!((mean - n_bar).abs() < 1e-9);
        prop_assert!(t.truncation_deficit < 1e-9);
    }

    #[test]
    fn pattern_json_round_trips_bit_exactly(amps in prop::collection::vec(0.0..=4.0f64, 1..6), k in 0.01..0.2f64) {
        let params = SystemParams::new(k, FockSpace::new(8, 4).unwrap()).unwrap();
        let p = build_pattern(&amps, &params, 4.0).unwrap();
        let json = p.to_json().unwrap();
        let back = DrivingPattern::from_json(&json).unwrap();
        prop_assert_eq!(&back, &p);
        prop_assert_eq!(back.to_json().unwrap(), json);
    }

    #[test]
    fn objective_is_deterministic_and_bounded(amps in prop::collection::vec(0.0..=4.0f64, 3)) {
        let p = OptimizationProblem { cavity_dim: 30, ..OptimizationProblem::new(TargetState::fock2(), 3, 4.0, 1.0 / 16.0) };
        let a = objective(&amps, &p).unwrap();
        let b = objective(&amps, &p).unwrap();
        prop_assert_eq!(a.to_bits(), b.to_bits());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}
