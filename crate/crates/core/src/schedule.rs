//! Driving timelines: per-period drive phases with the compensating phase
//! ramp, and the block layout `[driven 2T, free T/2, driven 2T, free T/2]`.

use std::f64::consts::PI;

use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DrivePulse, SystemParams};

/// Driven periods per block.
pub const PERIODS_PER_BLOCK: usize = 4;
/// Version tag written into serialized patterns.
pub const PATTERN_SCHEMA: &str = "optoprep.pattern/1";

/// Which parity of the driven-period counter carries the extra `π`.
///
/// Both choices satisfy the first-moment cancellation; `FirstPi` gives the
/// first driven period `ψ = π`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PhaseOrigin {
    #[default]
    FirstPi,
    FirstZero,
}

/// Drive phases and frame phases indexed by driven period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseLedger {
    /// Drive phase of each driven period.
    pub psi: Vec<f64>,
    /// Accumulated frame phase before each period; the extra last entry is
    /// the final `φ` after all periods.
    pub varphi: Vec<f64>,
    /// Per-period increments `(4/3)πk²η²`.
    pub phi_steps: Vec<f64>,
}

impl PhaseLedger {
    pub fn final_phase(&self) -> f64 {
        *self.varphi.last().unwrap_or(&0.0)
    }
}

/// Expands block amplitudes to one amplitude per driven period.
pub fn period_amplitudes(block_amplitudes: &[f64]) -> Vec<f64> {
    block_amplitudes.iter().flat_map(|&e| std::iter::repeat_n(e, PERIODS_PER_BLOCK)).collect()
}

/// Phase ramp for a list of per-period amplitudes.
pub fn phase_schedule_periods(period_etas: &[f64], k: f64, origin: PhaseOrigin) -> PhaseLedger {
    let c = 4.0 / 3.0 * PI * k * k;
    let phi_steps: Vec<f64> = period_etas.iter().map(|e| c * e * e).collect();
    let mut varphi = Vec::with_capacity(period_etas.len() + 1);
    let mut acc = 0.0;
    varphi.push(acc);
    for s in &phi_steps {
        acc += s;
        varphi.push(acc);
    }
    let psi = (0..period_etas.len())
        .map(|p| {
            let flip = match origin {
                PhaseOrigin::FirstPi => p % 2 == 0,
                PhaseOrigin::FirstZero => p % 2 == 1,
            };
            varphi[p] + if flip { PI } else { 0.0 }
        })
        .collect();
    PhaseLedger { psi, varphi, phi_steps }
}

/// Phase ramp for block amplitudes (each block holds four driven periods).
pub fn phase_schedule(block_amplitudes: &[f64], k: f64) -> Result<PhaseLedger> {
    phase_schedule_with(block_amplitudes, k, PhaseOrigin::default())
}

pub fn phase_schedule_with(block_amplitudes: &[f64], k: f64, origin: PhaseOrigin) -> Result<PhaseLedger> {
    if !(k > 0.0) {
        return Err(Error::InvalidParameter(format!("k = {k} must be positive")));
    }
    if let Some(e) = block_amplitudes.iter().find(|e| !(**e >= 0.0)) {
        return Err(Error::InvalidParameter(format!("amplitude {e} must be non-negative")));
    }
    Ok(phase_schedule_periods(&period_amplitudes(block_amplitudes), k, origin))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SegmentKind {
    Driven,
    Free,
}

/// One timeline window. Driven windows carry one phase per period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub duration_t: f64,
    pub eta: f64,
    pub psi: Vec<f64>,
}

/// The full protocol timeline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DrivingPattern {
    pub schema: String,
    pub params: SystemParams,
    pub eta_max: f64,
    pub phase_origin: PhaseOrigin,
    pub block_amplitudes: Vec<f64>,
    pub segments: Vec<Segment>,
}

pub fn build_pattern(block_amplitudes: &[f64], params: &SystemParams, eta_max: f64) -> Result<DrivingPattern> {
    build_pattern_with(block_amplitudes, params, eta_max, PhaseOrigin::default())
}

pub fn build_pattern_with(
    block_amplitudes: &[f64],
    params: &SystemParams,
    eta_max: f64,
    origin: PhaseOrigin,
) -> Result<DrivingPattern> {
    params.validate()?;
    if block_amplitudes.is_empty() {
        return Err(Error::ConstraintViolation("a pattern needs at least one block".into()));
    }
    if let Some((j, e)) = block_amplitudes.iter().enumerate().find(|(_, e)| !(**e >= 0.0 && **e <= eta_max)) {
        return Err(Error::ConstraintViolation(format!("block {j}: amplitude {e} outside [0, {eta_max}]")));
    }
    let ledger = phase_schedule_with(block_amplitudes, params.k, origin)?;
    let mut segments = Vec::with_capacity(4 * block_amplitudes.len());
    for (j, &eta) in block_amplitudes.iter().enumerate() {
        for w in 0..2 {
            let p = PERIODS_PER_BLOCK * j + 2 * w;
            segments.push(Segment {
                kind: SegmentKind::Driven,
                duration_t: 2.0,
                eta,
                psi: ledger.psi[p..p + 2].to_vec(),
            });
            segments.push(Segment { kind: SegmentKind::Free, duration_t: 0.5, eta: 0.0, psi: Vec::new() });
        }
    }
    Ok(DrivingPattern {
        schema: PATTERN_SCHEMA.to_string(),
        params: *params,
        eta_max,
        phase_origin: origin,
        block_amplitudes: block_amplitudes.to_vec(),
        segments,
    })
}

impl DrivingPattern {
    pub fn n_blocks(&self) -> usize {
        self.block_amplitudes.len()
    }

    /// Total duration in units of `T`.
    pub fn duration_t(&self) -> f64 {
        self.segments.iter().map(|s| s.duration_t).sum()
    }

    /// Start time of each segment, in units of `T`.
    pub fn segment_starts(&self) -> Vec<f64> {
        let mut t = 0.0;
        self.segments
            .iter()
            .map(|s| {
                let start = t;
                t += s.duration_t;
                start
            })
            .collect()
    }

    /// One pulse per driven period.
    pub fn pulses(&self) -> Vec<DrivePulse> {
        let mut out = Vec::new();
        for (seg, start) in self.segments.iter().zip(self.segment_starts()) {
            if seg.kind == SegmentKind::Driven {
                for (i, &psi) in seg.psi.iter().enumerate() {
                    out.push(DrivePulse { eta: seg.eta, psi, t_start: start + i as f64, duration: 1.0 });
                }
            }
        }
        out
    }

    /// Amplitudes of the driven periods in order.
    pub fn period_etas(&self) -> Vec<f64> {
        self.pulses().iter().map(|p| p.eta).collect()
    }

    pub fn ledger(&self) -> PhaseLedger {
        phase_schedule_periods(&self.period_etas(), self.params.k, self.phase_origin)
    }

    /// Checks the block layout, amplitude bounds and phase consistency.
    pub fn validate(&self) -> Result<()> {
        if self.schema != PATTERN_SCHEMA {
            return Err(Error::Contract(format!("unknown pattern schema {:?}", self.schema)));
        }
        self.params.validate()?;
        if self.segments.len() != 4 * self.block_amplitudes.len() || self.block_amplitudes.is_empty() {
            return Err(Error::Contract("each block must consist of exactly four segments".into()));
        }
        for (j, block) in self.segments.chunks(4).enumerate() {
            let eta = self.block_amplitudes[j];
            if !(eta >= 0.0 && eta <= self.eta_max) {
                return Err(Error::ConstraintViolation(format!("block {j}: amplitude {eta} outside [0, {}]", self.eta_max)));
            }
            for (i, s) in block.iter().enumerate() {
                let ok = if i % 2 == 0 {
                    s.kind == SegmentKind::Driven && s.duration_t == 2.0 && s.eta == eta && s.psi.len() == 2
                } else {
                    s.kind == SegmentKind::Free && s.duration_t == 0.5 && s.eta == 0.0 && s.psi.is_empty()
                };
                if !ok {
                    return Err(Error::Contract(format!("block {j}, segment {i} breaks the block layout")));
                }
            }
        }
        let ledger = self.ledger();
        let psi: Vec<f64> = self.pulses().iter().map(|p| p.psi).collect();
        let worst = psi.iter().zip(&ledger.psi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if worst > 1e-12 {
            return Err(Error::Contract(format!("segment phases deviate from the phase ramp by {worst:.3e}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(s)?;
        p.validate()?;
        Ok(p)
    }
}

/// Moments of the phase-compensated drive sequence.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CancellationReport {
    /// `|Σ η_j e^{−i(ψ_j − φ_j)}|`, which must vanish.
    pub first_moment: f64,
    /// `ζ' = (1/N) Σ η_j² e^{−2i(ψ_j − φ_j)}`.
    pub zeta_re: f64,
    pub zeta_im: f64,
    /// `χ = (1/N) Σ η_j²`.
    pub chi: f64,
    /// All amplitudes vanish, so `ζ'` carries no information.
    pub degenerate: bool,
}

impl CancellationReport {
    pub fn zeta(&self) -> C64 {
        C64::new(self.zeta_re, self.zeta_im)
    }

    pub fn passes(&self) -> bool {
        self.first_moment < 1e-12 && (self.degenerate || self.zeta().norm() > 1e-12)
    }
}

pub fn validate_cancellation(pattern: &DrivingPattern) -> CancellationReport {
    let pulses = pattern.pulses();
    let ledger = pattern.ledger();
    let n = pulses.len().max(1) as f64;
    let mut first = C64::new(0.0, 0.0);
    let mut second = C64::new(0.0, 0.0);
    let mut chi = 0.0;
    for (p, phi) in pulses.iter().zip(&ledger.varphi) {
        let d = p.psi - phi;
        first += C64::from_polar(p.eta, -d);
        second += C64::from_polar(p.eta * p.eta, -2.0 * d);
        chi += p.eta * p.eta;
    }
    let zeta = second / n;
    CancellationReport {
        first_moment: first.norm(),
        zeta_re: zeta.re,
        zeta_im: zeta.im,
        chi: chi / n,
        degenerate: pulses.iter().all(|p| p.eta == 0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::FockSpace;

    fn params(k: f64) -> SystemParams {
        SystemParams::new(k, FockSpace::new(4, 3).unwrap()).unwrap()
    }

    #[test]
    fn small_k_alternates() {
        let l = phase_schedule(&[4.0, 2.0], 1e-12).unwrap();
        for (p, psi) in l.psi.iter().enumerate() {
            let expect = if p % 2 == 0 { PI } else { 0.0 };
            assert!((psi - expect).abs() < 1e-20 + 1e-15);
        }
        let l = phase_schedule_with(&[4.0], 1e-12, PhaseOrigin::FirstZero).unwrap();
        assert!(l.psi[0].abs() < 1e-15 && (l.psi[1] - PI).abs() < 1e-15);
    }

    #[test]
    fn first_block_empty_sums() {
        let (k, eta) = (1.0 / 26.0, 3.0);
        let l = phase_schedule(&[eta], k).unwrap();
        assert_eq!(l.psi[0], PI);
        let expect = 4.0 / 3.0 * PI * k * k * eta * eta;
        assert!((l.psi[1] - expect).abs() < 1e-15);
    }

    #[test]
    fn ledger_matches_pairwise_formula() {
        // ψ_{2j} = π + (8/3)πk² Σ_{l<j} η_l², ψ_{2j+1} = (4/3)πk²(η_j² + 2Σ_{l<j} η_l²),
        // with one amplitude per pair of periods
        let k = 1.0f64 / 26.0;
        let pairs = [4.0f64, 4.0];
        let periods: Vec<f64> = pairs.iter().flat_map(|&e| [e, e]).collect();
        let l = phase_schedule_periods(&periods, k, PhaseOrigin::FirstPi);
        for j in 0..pairs.len() {
            let prior: f64 = pairs[..j].iter().map(|e| e * e).sum();
            let even = PI + 8.0 / 3.0 * PI * k * k * prior;
            let odd = 4.0 / 3.0 * PI * k * k * (pairs[j] * pairs[j] + 2.0 * prior);
            assert!((l.psi[2 * j] - even).abs() < 1e-14);
            assert!((l.psi[2 * j + 1] - odd).abs() < 1e-14);
        }
        for (j, s) in l.phi_steps.iter().enumerate() {
            assert!((l.varphi[j + 1] - l.varphi[j] - s).abs() < 1e-15);
        }
    }

    #[test]
    fn pattern_layout() {
        let p = params(1.0 / 26.0);
        let pat = build_pattern(&[1.0, 2.0, 3.0], &p, 4.0).unwrap();
        assert_eq!(pat.segments.len(), 12);
        assert_eq!(pat.duration_t(), 15.0);
        assert_eq!(pat.pulses().len(), 12);
        pat.validate().unwrap();

        let idle = build_pattern(&[0.0], &p, 4.0).unwrap();
        assert_eq!(idle.duration_t(), 5.0);
        assert!(idle.pulses().iter().all(|q| q.eta == 0.0));

        let long = build_pattern(&[4.0; 16], &p, 4.0).unwrap();
        assert_eq!(long.duration_t(), 80.0);

        assert!(matches!(build_pattern(&[4.5], &p, 4.0), Err(Error::ConstraintViolation(_))));
        assert!(matches!(build_pattern(&[-0.1], &p, 4.0), Err(Error::ConstraintViolation(_))));
    }

    #[test]
    fn cancellation_examples() {
        let p = params(1.0 / 26.0);
        let r = validate_cancellation(&build_pattern(&[2.5], &p, 4.0).unwrap());
        assert!(r.first_moment < 1e-12 && r.passes());

        let r = validate_cancellation(&build_pattern(&[0.0, 0.0], &p, 4.0).unwrap());
        assert!(r.degenerate && r.first_moment == 0.0 && r.zeta().norm() == 0.0);

        let r = validate_cancellation(&build_pattern(&[4.0; 16], &p, 4.0).unwrap());
        assert!((r.zeta().norm() - 16.0).abs() < 1e-6);
        assert!((r.chi - 16.0).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let p = params(1.0 / 21.0);
        let pat = build_pattern(&[0.1, 3.999_999_999_999_999, 1.0 / 3.0], &p, 4.0).unwrap();
        let back = DrivingPattern::from_json(&pat.to_json().unwrap()).unwrap();
        assert_eq!(back, pat);
        for (a, b) in pat.pulses().iter().zip(back.pulses()) {
            assert_eq!(a.psi.to_bits(), b.psi.to_bits());
        }
    }

    #[test]
    fn tampered_json_is_rejected() {
        let p = params(1.0 / 26.0);
        let pat = build_pattern(&[1.0], &p, 4.0).unwrap();
        let mut bad = pat.clone();
        bad.segments[0].psi[1] += 0.1;
        assert!(DrivingPattern::from_json(&bad.to_json().unwrap()).is_err());
        let mut bad = pat;
        bad.segments.pop();
        assert!(DrivingPattern::from_json(&bad.to_json().unwrap()).is_err());
    }
}
