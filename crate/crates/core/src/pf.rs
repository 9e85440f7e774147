//! Pseudo-fermion mode construction and validation.
//!
//! Each reservoir is replaced by damped ancillary fermionic modes with
//! (possibly complex) occupation n, coupling lambda, frequency Omega and
//! damping rate. A mode's free correlation is
//!
//!   C^s(t) = lambda^2 [(1-s)/2 + s n] e^{i s Omega t - Gamma |t|},
//!
//! with no complex conjugation applied to any parameter (pseudo-Schroedinger
//! convention), so lambda^2 rather than |lambda|^2 enters and C^s(0) may be
//! negative or complex. The maps below choose mode parameters so the summed
//! mode correlations reproduce the resonant and Matsubara contributions of a
//! Lorentzian reservoir, either exactly (four modes per Matsubara term), up to
//! O(1/Delta) (two modes per term with a large regulator Delta), or through a
//! fitted few-term envelope.

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bath::fit::FitTerm;
use crate::bath::quad::correlation_quadrature;
use crate::bath::{matsubara_term, LorentzianBathSpec, Sigma};
use crate::error::{PfError, Result};

/// Default regulator for the two-mode Matsubara map.
pub const DEFAULT_DELTA: Complex64 = Complex64::new(1e6, 0.0);
/// Smallest regulator magnitude accepted by the two-mode map. The map error
/// is O(1/|Delta|), so values this small are only for runs that must keep the
/// Delta^(mode-count) state-entry growth in check.
pub const MIN_ABS_DELTA: f64 = 10.0;

/// One ancillary damped mode. `coupling_sq` is authoritative for correlations;
/// `coupling` is its principal square root and enters the Hamiltonian (either
/// branch gives identical physics since the coupling enters bilinearly with
/// itself, never with its conjugate).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PseudoFermionMode {
    pub occupation: Complex64,
    pub coupling: Complex64,
    pub coupling_sq: Complex64,
    pub frequency: Complex64,
    pub damping: Complex64,
    pub lead: usize,
    pub spin: usize,
}

impl PseudoFermionMode {
    fn from_parts(
        occupation: Complex64,
        coupling_sq: Complex64,
        frequency: Complex64,
        damping: Complex64,
        lead: usize,
        spin: usize,
    ) -> Result<Self> {
        let mode = PseudoFermionMode {
            occupation,
            coupling: coupling_sq.sqrt(),
            coupling_sq,
            frequency,
            damping,
            lead,
            spin,
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.damping.re > 0.0) {
            return Err(PfError::InvalidParameter(format!(
                "mode damping must have positive real part, got {}",
                self.damping
            )));
        }
        if !self.coupling_sq.re.is_finite() || !self.coupling_sq.im.is_finite() {
            return Err(PfError::InvalidParameter("mode coupling^2 not finite".into()));
        }
        Ok(())
    }
}

/// Free correlation of a single mode (pseudo-Schroedinger convention: no
/// conjugation of lambda, Omega or the damping anywhere).
pub fn pf_mode_correlation(mode: &PseudoFermionMode, sigma: Sigma, t: f64) -> Complex64 {
    let s = sigma.sign();
    let weight = Complex64::new(0.5 * (1.0 - s), 0.0) + s * mode.occupation;
    let exponent = Complex64::new(0.0, s * t) * mode.frequency - mode.damping * t.abs();
    mode.coupling_sq * weight * exponent.exp()
}

/// How a bath's mode set was constructed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BathConstruction {
    ResonantOnly,
    /// Resonant mode plus two modes per Matsubara term, regulated by Delta.
    ExactTwo { k_max: usize, delta: Complex64 },
    /// Resonant mode plus four modes per Matsubara term; no regulator.
    ExactFour { k_max: usize },
    /// Resonant mode plus two modes per fitted envelope term.
    Fitted { terms: Vec<FitTerm>, delta: Complex64 },
}

/// A reservoir's full pseudo-fermion replacement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoFermionBath {
    pub modes: Vec<PseudoFermionMode>,
    pub source: LorentzianBathSpec,
    pub construction: BathConstruction,
    pub lead: usize,
    pub spin: usize,
}

/// Resonant-contribution mode: n = 1/2, lambda^2 = G W, Omega = mu, damping = W.
pub fn resonant_mode(spec: &LorentzianBathSpec, lead: usize, spin: usize) -> Result<PseudoFermionMode> {
    spec.validate()?;
    PseudoFermionMode::from_parts(
        Complex64::new(0.5, 0.0),
        Complex64::new(spec.coupling * spec.width, 0.0),
        Complex64::new(spec.mu, 0.0),
        Complex64::new(spec.width, 0.0),
        lead,
        spin,
    )
}

/// Two-mode map for one difference-of-exponentials contribution
/// M (e^{-x|t|} - e^{-W|t|}) sg(t) e^{i s mu t}:
///
///   n_{+-} = Delta, lambda^2_{+-} = +-M/Delta,
///   Omega_{+-} = mu +- i(x - W)/2, Gamma = (W + x)/2.
///
/// The summed pair correlation reproduces the contribution exactly for
/// sigma = +1 and up to a relative 1/Delta for sigma = -1.
fn two_mode_pair(
    mu: f64,
    amplitude: Complex64,
    rate: f64,
    width: f64,
    delta: Complex64,
    lead: usize,
    spin: usize,
) -> Result<[PseudoFermionMode; 2]> {
    if delta.norm() < MIN_ABS_DELTA {
        return Err(PfError::RegulatorTooSmall {
            abs_delta: delta.norm(),
            min: MIN_ABS_DELTA,
        });
    }
    let damping = Complex64::new(0.5 * (width + rate), 0.0);
    let half_gap = 0.5 * (rate - width);
    let make = |sign: f64| {
        PseudoFermionMode::from_parts(
            delta,
            sign * amplitude / delta,
            Complex64::new(mu, sign * half_gap),
            damping,
            lead,
            spin,
        )
    };
    Ok([make(1.0)?, make(-1.0)?])
}

/// Four-mode map for the same contribution, exact for both orderings and free
/// of any asymptotic regulator:
///
///   n = (1 + s')/2, lambda^2 = r M, Omega = mu + i r s' (x - W)/2,
///   Gamma = (W + x)/2,   for (r, s') in {+-1}^2.
fn four_mode_quad(
    mu: f64,
    amplitude: Complex64,
    rate: f64,
    width: f64,
    lead: usize,
    spin: usize,
) -> Result<[PseudoFermionMode; 4]> {
    let damping = Complex64::new(0.5 * (width + rate), 0.0);
    let half_gap = 0.5 * (rate - width);
    let make = |r: f64, s_prime: f64| {
        PseudoFermionMode::from_parts(
            Complex64::new(0.5 * (1.0 + s_prime), 0.0),
            r * amplitude,
            Complex64::new(mu, r * s_prime * half_gap),
            damping,
            lead,
            spin,
        )
    };
    Ok([
        make(1.0, 1.0)?,
        make(1.0, -1.0)?,
        make(-1.0, 1.0)?,
        make(-1.0, -1.0)?,
    ])
}

/// Two regulated modes reproducing the k-th Matsubara contribution.
pub fn matsubara_modes_two(
    spec: &LorentzianBathSpec,
    k: usize,
    delta: Complex64,
    lead: usize,
    spin: usize,
) -> Result<[PseudoFermionMode; 2]> {
    let term = matsubara_term(k, spec)?;
    two_mode_pair(
        spec.mu,
        term.amplitude,
        term.frequency,
        spec.width,
        delta,
        lead,
        spin,
    )
}

/// Four unregulated modes reproducing the k-th Matsubara contribution exactly.
pub fn matsubara_modes_four(
    spec: &LorentzianBathSpec,
    k: usize,
    lead: usize,
    spin: usize,
) -> Result<[PseudoFermionMode; 4]> {
    let term = matsubara_term(k, spec)?;
    four_mode_quad(spec.mu, term.amplitude, term.frequency, spec.width, lead, spin)
}

/// Two-mode map applied to fitted envelope terms; 2 * n_terms modes.
pub fn modes_from_fit(
    spec: &LorentzianBathSpec,
    terms: &[FitTerm],
    delta: Complex64,
    lead: usize,
    spin: usize,
) -> Result<Vec<PseudoFermionMode>> {
    let mut modes = Vec::with_capacity(2 * terms.len());
    for term in terms {
        term.validate()?;
        let pair = two_mode_pair(
            spec.mu,
            term.amplitude,
            term.rate_like,
            term.width_like,
            delta,
            lead,
            spin,
        )?;
        modes.extend_from_slice(&pair);
    }
    Ok(modes)
}

/// Four-mode map applied to fitted envelope terms; 4 * n_terms modes.
pub fn modes_from_fit_four(
    spec: &LorentzianBathSpec,
    terms: &[FitTerm],
    lead: usize,
    spin: usize,
) -> Result<Vec<PseudoFermionMode>> {
    let mut modes = Vec::with_capacity(4 * terms.len());
    for term in terms {
        term.validate()?;
        let quad = four_mode_quad(
            spec.mu,
            term.amplitude,
            term.rate_like,
            term.width_like,
            lead,
            spin,
        )?;
        modes.extend_from_slice(&quad);
    }
    Ok(modes)
}

impl PseudoFermionBath {
    pub fn resonant_only(spec: &LorentzianBathSpec, lead: usize, spin: usize) -> Result<Self> {
        Ok(PseudoFermionBath {
            modes: vec![resonant_mode(spec, lead, spin)?],
            source: *spec,
            construction: BathConstruction::ResonantOnly,
            lead,
            spin,
        })
    }

    /// Resonant plus two-mode Matsubara pairs for k = 1..k_max; 1 + 2 k_max modes.
    pub fn exact_two(
        spec: &LorentzianBathSpec,
        k_max: usize,
        delta: Complex64,
        lead: usize,
        spin: usize,
    ) -> Result<Self> {
        let mut modes = vec![resonant_mode(spec, lead, spin)?];
        for k in 1..=k_max {
            modes.extend_from_slice(&matsubara_modes_two(spec, k, delta, lead, spin)?);
        }
        debug_assert_eq!(modes.len(), 1 + 2 * k_max);
        Ok(PseudoFermionBath {
            modes,
            source: *spec,
            construction: BathConstruction::ExactTwo { k_max, delta },
            lead,
            spin,
        })
    }

    /// Resonant plus four-mode Matsubara quadruples; 1 + 4 k_max modes.
    pub fn exact_four(
        spec: &LorentzianBathSpec,
        k_max: usize,
        lead: usize,
        spin: usize,
    ) -> Result<Self> {
        let mut modes = vec![resonant_mode(spec, lead, spin)?];
        for k in 1..=k_max {
            modes.extend_from_slice(&matsubara_modes_four(spec, k, lead, spin)?);
        }
        debug_assert_eq!(modes.len(), 1 + 4 * k_max);
        Ok(PseudoFermionBath {
            modes,
            source: *spec,
            construction: BathConstruction::ExactFour { k_max },
            lead,
            spin,
        })
    }

    /// Resonant plus fitted two-mode pairs; 1 + 2 n_terms modes.
    pub fn fitted(
        spec: &LorentzianBathSpec,
        terms: &[FitTerm],
        delta: Complex64,
        lead: usize,
        spin: usize,
    ) -> Result<Self> {
        let mut modes = vec![resonant_mode(spec, lead, spin)?];
        modes.extend(modes_from_fit(spec, terms, delta, lead, spin)?);
        debug_assert_eq!(modes.len(), 1 + 2 * terms.len());
        Ok(PseudoFermionBath {
            modes,
            source: *spec,
            construction: BathConstruction::Fitted {
                terms: terms.to_vec(),
                delta,
            },
            lead,
            spin,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.modes.len()
    }

    /// Exact JSON round trip of modes plus construction metadata.
    pub fn to_descriptor(&self) -> String {
        serde_json::to_string_pretty(self).expect("bath serialization cannot fail")
    }

    pub fn from_descriptor(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| PfError::Config(format!("bath descriptor: {e}")))
    }
}

/// Summed free correlation of a mode set.
pub fn pf_bath_correlation(modes: &[PseudoFermionMode], sigma: Sigma, t: f64) -> Complex64 {
    modes
        .iter()
        .map(|m| pf_mode_correlation(m, sigma, t))
        .sum()
}

/// Deviation of the bath's summed correlation from a reference on one grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SigmaDeviation {
    pub sigma: Sigma,
    pub sup: f64,
    pub l2: f64,
    pub argmax_t: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub deviations: Vec<SigmaDeviation>,
    pub tolerance: f64,
    pub pass: bool,
}

impl ValidationReport {
    pub fn max_sup(&self) -> f64 {
        self.deviations.iter().map(|d| d.sup).fold(0.0, f64::max)
    }
}

/// Compare the bath's summed correlation against the exact quadrature
/// reference on `grid` for the requested orderings, with pass/fail against a
/// caller-supplied sup-norm tolerance.
pub fn validate_bath(
    bath: &PseudoFermionBath,
    spec: &LorentzianBathSpec,
    grid: &[f64],
    sigmas: &[Sigma],
    tolerance: f64,
) -> Result<ValidationReport> {
    if grid.is_empty() {
        return Err(PfError::InvalidParameter("validation grid is empty".into()));
    }
    let mut deviations = Vec::new();
    for &sigma in sigmas {
        let diffs: Vec<(f64, f64)> = grid
            .par_iter()
            .map(|&t| {
                let reference = correlation_quadrature(sigma, t, spec)?;
                let ours = pf_bath_correlation(&bath.modes, sigma, t);
                Ok((t, (ours - reference).norm()))
            })
            .collect::<Result<_>>()?;
        let (argmax_t, sup) = diffs
            .iter()
            .copied()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap();
        let l2 = diffs.iter().map(|(_, d)| d * d).sum::<f64>().sqrt();
        deviations.push(SigmaDeviation {
            sigma,
            sup,
            l2,
            argmax_t,
        });
    }
    let pass = deviations.iter().all(|d| d.sup <= tolerance);
    Ok(ValidationReport {
        deviations,
        tolerance,
        pass,
    })
}
