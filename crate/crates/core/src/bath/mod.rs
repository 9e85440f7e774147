//! Reservoir correlation functions for Lorentzian spectral densities.
//!
//! A fermionic reservoir at inverse temperature beta and chemical potential mu,
//! coupled through the spectral density J(w) = G W^2 / ((w - mu)^2 + W^2), has
//! the two-point correlations
//!
//!   C^s(t) = (1/pi) Int dw J(w) e^{i s w t} [(1-s)/2 + s n(w)],   s = +-1,
//!
//! which split into one resonant exponential plus a series of Matsubara
//! exponentials. This module evaluates the exact integral by adaptive
//! quadrature, the closed-form decomposition, the zero-temperature limit of the
//! Matsubara part, and a few-term exponential fit of the Matsubara tail.

pub mod fit;
pub mod quad;

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{PfError, Result};

/// Relative guard for the removable pole of the Matsubara coefficient at x_k = W.
pub const POLE_GUARD_REL: f64 = 1e-8;

/// Ordering label for two-point functions: `Plus` is the <B† B> ordering,
/// `Minus` the <B B†> one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sigma {
    Plus,
    Minus,
}

impl Sigma {
    pub const BOTH: [Sigma; 2] = [Sigma::Plus, Sigma::Minus];

    #[inline]
    pub fn sign(self) -> f64 {
        match self {
            Sigma::Plus => 1.0,
            Sigma::Minus => -1.0,
        }
    }

    pub fn flip(self) -> Sigma {
        match self {
            Sigma::Plus => Sigma::Minus,
            Sigma::Minus => Sigma::Plus,
        }
    }
}

impl fmt::Display for Sigma {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Sigma::Plus => write!(f, "+1"),
            Sigma::Minus => write!(f, "-1"),
        }
    }
}

/// Inverse temperature, with zero temperature (beta = +inf) as a distinguished
/// state rather than a floating-point infinity sprinkled through formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Beta {
    Finite(f64),
    Infinite,
}

impl Beta {
    pub fn is_finite(self) -> bool {
        matches!(self, Beta::Finite(_))
    }

    /// The finite value, or an error for the zero-temperature state.
    pub fn finite(self) -> Result<f64> {
        match self {
            Beta::Finite(b) => Ok(b),
            Beta::Infinite => Err(PfError::InvalidParameter(
                "operation requires finite inverse temperature".into(),
            )),
        }
    }

    pub fn from_f64(value: f64) -> Self {
        if value.is_infinite() {
            Beta::Infinite
        } else {
            Beta::Finite(value)
        }
    }
}

impl Serialize for Beta {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Beta::Finite(b) => s.serialize_f64(*b),
            Beta::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Beta {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl serde::de::Visitor<'_> for V {
            type Value = Beta;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                write!(f, "a positive number or \"inf\"")
            }
            fn visit_f64<E: serde::de::Error>(self, v: f64) -> std::result::Result<Beta, E> {
                Ok(Beta::from_f64(v))
            }
            fn visit_i64<E: serde::de::Error>(self, v: i64) -> std::result::Result<Beta, E> {
                Ok(Beta::Finite(v as f64))
            }
            fn visit_u64<E: serde::de::Error>(self, v: u64) -> std::result::Result<Beta, E> {
                Ok(Beta::Finite(v as f64))
            }
            fn visit_str<E: serde::de::Error>(self, v: &str) -> std::result::Result<Beta, E> {
                if v == "inf" || v == "infinite" {
                    Ok(Beta::Infinite)
                } else {
                    v.parse::<f64>().map(Beta::from_f64).map_err(E::custom)
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Physical reservoir parameters defining the Lorentzian spectral density and
/// its thermal occupation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianBathSpec {
    /// Overall coupling strength G (frequency units).
    pub coupling: f64,
    /// Lorentzian half width W (frequency units).
    pub width: f64,
    /// Chemical potential mu; the spectral density is centered on it.
    pub mu: f64,
    /// Inverse temperature beta.
    pub beta: Beta,
}

impl LorentzianBathSpec {
    pub fn new(coupling: f64, width: f64, mu: f64, beta: Beta) -> Result<Self> {
        let spec = LorentzianBathSpec {
            coupling,
            width,
            mu,
            beta,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.coupling > 0.0) || !self.coupling.is_finite() {
            return Err(PfError::InvalidParameter(format!(
                "coupling must be positive and finite, got {}",
                self.coupling
            )));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(PfError::InvalidParameter(format!(
                "width must be positive and finite, got {}",
                self.width
            )));
        }
        if !self.mu.is_finite() {
            return Err(PfError::InvalidParameter(format!(
                "chemical potential must be finite, got {}",
                self.mu
            )));
        }
        if let Beta::Finite(b) = self.beta {
            if !(b > 0.0) || !b.is_finite() {
                return Err(PfError::InvalidParameter(format!(
                    "inverse temperature must be positive, got {b}"
                )));
            }
        }
        Ok(())
    }

    /// Same reservoir shifted to a different chemical potential.
    pub fn with_mu(&self, mu: f64) -> Self {
        LorentzianBathSpec { mu, ..*self }
    }
}

/// One term of the Matsubara expansion of the Fermi function, carrying the
/// pole frequency x_k = (2k-1) pi / beta and the coefficient
/// M_k = 2i G W^2 / (beta (x_k^2 - W^2)).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatsubaraTerm {
    pub index: usize,
    pub frequency: f64,
    pub amplitude: Complex64,
}

/// Tabulated correlation samples, one ordering per table.
#[derive(Debug, Clone)]
pub struct CorrelationTable {
    pub sigma: Sigma,
    pub times: Vec<f64>,
    pub values: Vec<Complex64>,
}

impl CorrelationTable {
    pub fn new(sigma: Sigma, times: Vec<f64>, values: Vec<Complex64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(PfError::DimensionMismatch(format!(
                "times ({}) vs values ({})",
                times.len(),
                values.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(PfError::InvalidParameter(
                "correlation table grid must be strictly increasing".into(),
            ));
        }
        if values.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(PfError::InvalidParameter(
                "correlation table contains non-finite values".into(),
            ));
        }
        Ok(CorrelationTable {
            sigma,
            times,
            values,
        })
    }
}

/// Fermi occupation n(w) = 1 / (1 + e^{beta (w - mu)}), overflow-safe, with the
/// sharp step (value 1/2 at w = mu) in the zero-temperature state.
pub fn fermi_occupation(omega: f64, spec: &LorentzianBathSpec) -> f64 {
    match spec.beta {
        Beta::Finite(beta) => {
            let x = beta * (omega - spec.mu);
            if x >= 0.0 {
                let e = (-x).exp();
                e / (1.0 + e)
            } else {
                1.0 / (1.0 + x.exp())
            }
        }
        Beta::Infinite => {
            if omega < spec.mu {
                1.0
            } else if omega > spec.mu {
                0.0
            } else {
                0.5
            }
        }
    }
}

/// Lorentzian spectral density J(w) = G W^2 / ((w - mu)^2 + W^2).
pub fn lorentzian_spectral_density(omega: f64, spec: &LorentzianBathSpec) -> f64 {
    let d = omega - spec.mu;
    spec.coupling * spec.width * spec.width / (d * d + spec.width * spec.width)
}

/// k-th Matsubara frequency x_k = (2k - 1) pi / beta.
pub fn matsubara_frequency(k: usize, beta: f64) -> f64 {
    (2.0 * k as f64 - 1.0) * std::f64::consts::PI / beta
}

/// Matsubara pole term (x_k, M_k). Errors when x_k collides with the
/// Lorentzian width, where the coefficient formula is 0/0.
pub fn matsubara_term(k: usize, spec: &LorentzianBathSpec) -> Result<MatsubaraTerm> {
    if k == 0 {
        return Err(PfError::InvalidParameter("Matsubara index starts at 1".into()));
    }
    let beta = spec.beta.finite()?;
    let x_k = matsubara_frequency(k, beta);
    let w = spec.width;
    let guard = POLE_GUARD_REL * w;
    if (x_k - w).abs() < guard {
        return Err(PfError::PoleCollision {
            k,
            x_k,
            width: w,
            guard,
        });
    }
    let amplitude = Complex64::new(0.0, 2.0 * spec.coupling * w * w) / (beta * (x_k * x_k - w * w));
    Ok(MatsubaraTerm {
        index: k,
        frequency: x_k,
        amplitude,
    })
}

/// Resonant contribution (G W / 2) e^{i s mu t - W |t|}.
pub fn resonant_correlation(sigma: Sigma, t: f64, spec: &LorentzianBathSpec) -> Complex64 {
    let phase = Complex64::new(-spec.width * t.abs(), sigma.sign() * spec.mu * t);
    0.5 * spec.coupling * spec.width * phase.exp()
}

/// sinh(y)/y, series near zero.
fn sinhc(y: Complex64) -> Complex64 {
    if y.norm() < 1e-4 {
        let y2 = y * y;
        Complex64::new(1.0, 0.0) + y2 / 6.0 * (Complex64::new(1.0, 0.0) + y2 / 20.0)
    } else {
        y.sinh() / y
    }
}

/// k-th Matsubara contribution to the correlation,
///
///   M_k^s(t) = M_k e^{-(W + x_k)|t|/2} sum_{r=+-} r e^{[i s mu + r (W - x_k)/2] t}.
///
/// Evaluated in a form with the x_k = W pole removed, so it stays finite and
/// continuous through the collision; it vanishes at t = 0.
pub fn matsubara_correlation_term(
    sigma: Sigma,
    t: f64,
    k: usize,
    spec: &LorentzianBathSpec,
) -> Result<Complex64> {
    let beta = spec.beta.finite()?;
    if k == 0 {
        return Err(PfError::InvalidParameter("Matsubara index starts at 1".into()));
    }
    let x_k = matsubara_frequency(k, beta);
    Ok(matsubara_profile(sigma, t, x_k, spec.width, spec.mu, spec.coupling, beta))
}

/// Shared pole-removed evaluation:
/// M_k 2 sinh((W - x)t/2) e^{i s mu t - (W + x)|t|/2}
///   = -(2 G W^2 / beta) t sinhc((x - W)t/2) e^{i s mu t - (W + x)|t|/2} / (x + W).
fn matsubara_profile(
    sigma: Sigma,
    t: f64,
    x_k: f64,
    w: f64,
    mu: f64,
    coupling: f64,
    beta: f64,
) -> Complex64 {
    let a = 0.5 * (x_k - w);
    if (a * t).abs() > 20.0 {
        // far from the pole: the explicit difference form cannot overflow,
        // while sinh * envelope would
        let m_k = Complex64::new(0.0, 2.0 * coupling * w * w) / (beta * (x_k * x_k - w * w));
        let diff = (-x_k * t.abs()).exp() - (-w * t.abs()).exp();
        return t.signum() * m_k * diff * Complex64::new(0.0, sigma.sign() * mu * t).exp();
    }
    let envelope = Complex64::new(-0.5 * (w + x_k) * t.abs(), sigma.sign() * mu * t).exp();
    let prefactor = Complex64::new(0.0, -2.0 * coupling * w * w / (beta * (x_k + w))) * t;
    prefactor * sinhc(Complex64::new(a * t, 0.0)) * envelope
}

/// Truncated decomposition: resonant term plus the first `k_max` Matsubara
/// contributions. Converges to the exact correlation as `k_max` grows, at the
/// slow 1/k_max rate of the raw Matsubara expansion of the Fermi function.
pub fn correlation_decomposed(
    sigma: Sigma,
    t: f64,
    spec: &LorentzianBathSpec,
    k_max: usize,
) -> Result<Complex64> {
    let beta = spec.beta.finite()?;
    let mut acc = resonant_correlation(sigma, t, spec);
    for k in 1..=k_max {
        let x_k = matsubara_frequency(k, beta);
        acc += matsubara_profile(sigma, t, x_k, spec.width, spec.mu, spec.coupling, beta);
    }
    Ok(acc)
}

/// Closed form of the full Matsubara coefficient sum,
/// sum_k M_k = G W (1/2 - n_F(mu + iW)), with n_F evaluated at the upper
/// Lorentzian pole. Anchors the tail-compensated reference below.
pub fn matsubara_coefficient_sum(spec: &LorentzianBathSpec) -> Result<Complex64> {
    let beta = spec.beta.finite()?;
    // n_F(mu + iW) = 1 / (e^{i beta W} + 1)
    let n_pole = Complex64::new(1.0, 0.0)
        / (Complex64::new(0.0, beta * spec.width).exp() + Complex64::new(1.0, 0.0));
    Ok(spec.coupling * spec.width * (Complex64::new(0.5, 0.0) - n_pole))
}

/// Full Matsubara series M^s(t) = sum_{k>0} M_k^s(t) evaluated with the slow
/// e^{-W|t|} part of the tail resummed in closed form. The remaining truncated
/// piece decays like e^{-x_K |t|}, so the truncation order is chosen per time
/// point; accuracy `abs_tol` is honored for |t| >= ~1e-3 W at ordinary
/// parameters. Exactly zero at t = 0.
pub fn matsubara_sum_compensated(
    sigma: Sigma,
    t: f64,
    spec: &LorentzianBathSpec,
    abs_tol: f64,
) -> Result<Complex64> {
    let beta = spec.beta.finite()?;
    if t == 0.0 {
        return Ok(Complex64::new(0.0, 0.0));
    }
    let ta = t.abs();
    let sg = t.signum();
    let w = spec.width;

    // Need e^{-x_k |t|} * remaining-coefficient-mass < tol. The coefficient
    // tail mass behaves like 2 G W^2 beta / (pi^2 (2k)) for x_k >> W.
    let coeff_scale = 2.0 * spec.coupling * w * w * beta / (std::f64::consts::PI.powi(2));
    let mut k_max = ((35.0 / ta) * beta / (2.0 * std::f64::consts::PI)).ceil() as usize + 8;
    let k_floor = (beta * w / std::f64::consts::PI) as usize + 8;
    k_max = k_max.max(k_floor).min(80_000_000);

    let mut pole_part = Complex64::new(0.0, 0.0);
    let mut k = 1usize;
    while k <= k_max {
        let x_k = matsubara_frequency(k, beta);
        let m_k = Complex64::new(0.0, 2.0 * spec.coupling * w * w) / (beta * (x_k * x_k - w * w));
        pole_part += m_k * (-x_k * ta).exp();
        // All later terms are bounded by the geometric-free estimate below.
        if x_k > w && x_k * ta > 3.0 {
            let tail_bound = coeff_scale / (2.0 * k as f64) * (-(x_k + 2.0 * std::f64::consts::PI / beta) * ta).exp()
                / (1.0 - (-2.0 * std::f64::consts::PI * ta / beta).exp());
            if tail_bound < 0.1 * abs_tol {
                break;
            }
        }
        k += 1;
    }
    let s_inf = matsubara_coefficient_sum(spec)?;
    let envelope = pole_part - s_inf * (-w * ta).exp();
    let phase = Complex64::new(0.0, sigma.sign() * spec.mu * t).exp();
    Ok(sg * envelope * phase)
}

/// Zero-temperature limit of the Matsubara series,
///
///   M^s(t) = sg(t) (i G W^2 / pi) e^{i s mu t} Int_0^inf dx (e^{-x|t|} - e^{-W|t|}) / (x^2 - W^2),
///
/// where the integrand's x = W point is removable and is evaluated through its
/// limit. The integral is truncated with analytic remainder corrections.
pub fn matsubara_zero_t(sigma: Sigma, t: f64, spec: &LorentzianBathSpec) -> Result<Complex64> {
    if t == 0.0 {
        return Err(PfError::InvalidParameter(
            "zero-temperature Matsubara integral requires t != 0".into(),
        ));
    }
    let ta = t.abs();
    let w = spec.width;
    let tol = 1e-12;

    // (e^{-x tau} - e^{-W tau}) / (x^2 - W^2), stable through x = W.
    let integrand = |x: f64| -> Complex64 {
        let d = x - w;
        let val = if d.abs() * ta < 1e-8 {
            // limit -tau e^{-W tau} / (x + W) with first-order correction
            (-w * ta).exp() * (-ta) * (1.0 - 0.5 * d * ta) / (x + w)
        } else if d.abs() * ta < 0.5 {
            // cancellation-safe near the removable point
            (-w * ta).exp() * (-d * ta).exp_m1() / (d * (x + w))
        } else {
            ((-x * ta).exp() - (-w * ta).exp()) / (d * (x + w))
        };
        Complex64::new(val, 0.0)
    };

    // Panels split at the removable point and at the e^{-x tau} decay scale,
    // then stretched until the analytic remainder of both exponentials is
    // below tolerance.
    let mut breaks = vec![0.0, 0.5 * w, w, 2.0 * w];
    for scale in [0.3 / ta, 3.0 / ta, 30.0 / ta] {
        if scale < 2.0 * w {
            breaks.push(scale);
        }
    }
    breaks.sort_by(|a, b| a.total_cmp(b));
    breaks.dedup();
    let mut value = Complex64::new(0.0, 0.0);
    let mut achieved = 0.0f64;
    let mut upper = (2.0 * w).max(2.0 / ta);
    for pair in breaks.windows(2) {
        let r = quad::adaptive_quadrature(integrand, pair[0], pair[1], tol, 2000)?;
        value += r.value;
        achieved += r.error;
    }
    loop {
        let next = upper * 2.0;
        let r = quad::adaptive_quadrature(integrand, upper, next, tol, 2000)?;
        value += r.value;
        achieved += r.error;
        upper = next;
        // remainder of -e^{-W tau}/(x^2 - W^2): exact log; e^{-x tau} piece: bound
        let log_rem = (-w * ta).exp() / (2.0 * w) * ((upper + w) / (upper - w)).ln();
        let exp_rem = (-upper * ta).exp() / (ta * (upper * upper - w * w));
        if log_rem + exp_rem < tol || upper > 1e12 {
            value -= Complex64::new(log_rem, 0.0);
            achieved += exp_rem;
            break;
        }
    }
    let _ = achieved;
    let prefactor = Complex64::new(0.0, spec.coupling * w * w / std::f64::consts::PI);
    let phase = Complex64::new(0.0, sigma.sign() * spec.mu * t).exp();
    Ok(t.signum() * prefactor * phase * value)
}
