//! Target states and the three benchmark fidelities.
//!
//! `F_n` compares the lossless final state with the target, `F_l` the noisy
//! one, and `F_i` the lossless and noisy states with each other. Every
//! propagator already stores states in the physical rotating frame, so no
//! frame correction is applied here.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{fidelity, QuantumState, Space};
use crate::propagation::SimulationResult;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum TargetState {
    Fock { n: usize },
    /// `(|0⟩ + e^{iϑ}|2⟩)/√2`. `theta = None` means the phase is free and
    /// fidelities are maximized over it.
    Superposition { theta: Option<f64> },
}

impl TargetState {
    pub fn fock2() -> Self {
        TargetState::Fock { n: 2 }
    }

    pub fn superposition_free() -> Self {
        TargetState::Superposition { theta: None }
    }

    /// The target as a pure cavity state; a free phase is taken as 0.
    pub fn state(&self, dim: usize) -> Result<QuantumState> {
        match *self {
            TargetState::Fock { n } => QuantumState::fock(Space::Cavity(dim), n),
            TargetState::Superposition { theta } => {
                if dim < 3 {
                    return Err(Error::InvalidDimension(format!("superposition target needs dimension ≥ 3, got {dim}")));
                }
                let mut v = DVector::zeros(dim);
                v[0] = C64::new(FRAC_1_SQRT_2, 0.0);
                v[2] = C64::from_polar(FRAC_1_SQRT_2, theta.unwrap_or(0.0));
                QuantumState::pure(Space::Cavity(dim), v)
            }
        }
    }

    pub fn with_theta(&self, theta: f64) -> Self {
        match self {
            TargetState::Superposition { .. } => TargetState::Superposition { theta: Some(theta) },
            t => *t,
        }
    }
}

/// Fidelity of a reduced cavity density matrix with the target, plus the
/// maximizing phase for a free superposition.
///
/// For the superposition, `⟨Ψ_ϑ|ρ|Ψ_ϑ⟩ = (ρ₀₀+ρ₂₂)/2 + Re(e^{iϑ}ρ₀₂)`, which is
/// maximal at `ϑ = −arg ρ₀₂`.
pub fn target_fidelity(rho: &DMatrix<C64>, target: &TargetState) -> Result<(f64, Option<f64>)> {
    let d = rho.nrows();
    match *target {
        TargetState::Fock { n } => {
            if n >= d {
                return Err(Error::InvalidDimension(format!("target |{n}⟩ outside dimension {d}")));
            }
            Ok((rho[(n, n)].re.clamp(0.0, 1.0).sqrt(), None))
        }
        TargetState::Superposition { theta } => {
            if d < 3 {
                return Err(Error::InvalidDimension(format!("superposition target needs dimension ≥ 3, got {d}")));
            }
            let r02 = rho[(0, 2)];
            let th = theta.unwrap_or(-r02.arg());
            let ov = 0.5 * (rho[(0, 0)].re + rho[(2, 2)].re) + (C64::from_polar(1.0, th) * r02).re;
            Ok((ov.clamp(0.0, 1.0).sqrt(), Some(th)))
        }
    }
}

fn final_cavity(result: &SimulationResult) -> Result<DMatrix<C64>> {
    Ok(result.final_cavity_state()?.density())
}

/// Lossless fidelity `F_n` and the phase it was evaluated at.
pub fn fidelity_fn(result: &SimulationResult, target: &TargetState) -> Result<(f64, Option<f64>)> {
    target_fidelity(&final_cavity(result)?, target)
}

/// Noisy fidelity `F_l`.
pub fn fidelity_fl(result: &SimulationResult, target: &TargetState) -> Result<(f64, Option<f64>)> {
    target_fidelity(&final_cavity(result)?, target)
}

/// Uhlmann fidelity `F_i` between the reduced cavity states of two runs.
pub fn fidelity_fi(lossless: &SimulationResult, noisy: &SimulationResult) -> Result<f64> {
    fidelity(&lossless.final_cavity_state()?, &noisy.final_cavity_state()?)
}

/// Total odd-Fock population and the largest even population excluding
/// the vacuum.
pub fn odd_even_split(populations: &[f64]) -> (f64, f64) {
    let odd = populations.iter().skip(1).step_by(2).sum();
    let even = populations.iter().skip(2).step_by(2).copied().fold(0.0, f64::max);
    (odd, even)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn fock_target_trivial_cases() {
        let two = QuantumState::fock(Space::Cavity(5), 2).unwrap();
        let (f, th) = target_fidelity(&two.density(), &TargetState::fock2()).unwrap();
        assert_eq!((f, th), (1.0, None));
        let vac = QuantumState::fock(Space::Cavity(5), 0).unwrap();
        assert_eq!(target_fidelity(&vac.density(), &TargetState::fock2()).unwrap().0, 0.0);
    }

    #[test]
    fn free_phase_is_recovered_and_matches_overlap() {
        for theta in [-1.86, 0.4, 3.0] {
            let t = TargetState::Superposition { theta: Some(theta) };
            let s = t.state(6).unwrap();
            let (f, th) = target_fidelity(&s.density(), &TargetState::superposition_free()).unwrap();
            assert!((f - 1.0).abs() < 1e-14);
            let d = (th.unwrap() - theta).rem_euclid(2.0 * PI);
            assert!(d.min(2.0 * PI - d) < 1e-12);
        }
        let vac = QuantumState::fock(Space::Cavity(6), 0).unwrap();
        let (f, _) = target_fidelity(&vac.density(), &TargetState::superposition_free()).unwrap();
        assert!((f - FRAC_1_SQRT_2).abs() < 1e-14);
        // fixed phase agrees with the generic overlap
        let t = TargetState::Superposition { theta: Some(0.7) };
        let mixed = QuantumState::mixed(Space::Cavity(6), {
            let a = t.state(6).unwrap().density() * C64::new(0.6, 0.0);
            a + vac.density() * C64::new(0.4, 0.0)
        })
        .unwrap();
        let (f1, _) = target_fidelity(&mixed.density(), &t).unwrap();
        let f2 = fidelity(&mixed, &t.state(6).unwrap()).unwrap();
        assert!((f1 - f2).abs() < 1e-12);
    }

    #[test]
    fn odd_even() {
        let (o, e) = odd_even_split(&[0.5, 0.01, 0.3, 0.02, 0.17]);
        assert!((o - 0.03).abs() < 1e-15);
        assert_eq!(e, 0.3);
    }
}
