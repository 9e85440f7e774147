//! Currents, occupations and the impurity spectral function.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::engine::{
    two_time_correlation, AugmentedState, EvolveOptions, Liouvillian, SystemSpec,
};
use crate::error::PfError;
use crate::fock::{annihilation, creation, FockOperator, FockSpaceLayout};
use crate::pf::PseudoFermionBath;
use crate::Result as CrateResult;

/// Particle current into one lead, in units of the reference coupling
/// (e = 1). Sign convention: positive means particles flowing into the lead.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CurrentSample {
    pub lead: usize,
    pub value: f64,
    /// Imaginary residual of the trace; nonzero only for unphysical baths and
    /// reported as a diagnostic.
    pub imaginary_part: f64,
}

/// Current operator for lead alpha:
/// J_alpha = -i sum_{j in alpha} lambda_j (s_nu c_j^dag + s_nu^dag c_j),
/// with the couplings entering unconjugated.
pub fn current_operator(
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
    layout: &FockSpaceLayout,
    lead: usize,
) -> CrateResult<FockOperator> {
    let table = crate::engine::pseudo_mode_table(system, baths);
    let mut op: Option<FockOperator> = None;
    for (idx, mode) in table {
        if mode.lead != lead {
            continue;
        }
        let s = system.coupling_operator(layout, mode.lead, mode.spin)?;
        let c_dag = creation(layout, idx)?;
        let c = annihilation(layout, idx)?;
        let piece = s
            .mul(&c_dag)?
            .add(&s.adjoint().mul(&c)?)?
            .scaled(mode.coupling * Complex64::new(0.0, -1.0));
        op = Some(match op {
            None => piece,
            Some(acc) => acc.add(&piece)?,
        });
    }
    op.ok_or_else(|| PfError::LayoutMismatch(format!("no modes tagged with lead {lead}")))
}

/// Tr[J_alpha rho] evaluated on a state.
pub fn lead_current(
    state: &AugmentedState,
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
    layout: &FockSpaceLayout,
    lead: usize,
) -> CrateResult<CurrentSample> {
    let op = current_operator(system, baths, layout, lead)?;
    let val = state.expectation(&op.mat);
    Ok(CurrentSample {
        lead,
        value: val.re,
        imaginary_part: val.im,
    })
}

/// Tr[c^dag c rho] for one mode; complex for unphysical baths.
pub fn occupation(state: &AugmentedState, mode: usize) -> Complex64 {
    state.occupation(mode)
}

/// Impurity spectral function on a frequency grid.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub spin: usize,
    pub omega: Vec<f64>,
    pub values: Vec<f64>,
    /// max |Im A(omega)| / max |A| before discarding the imaginary part.
    pub imaginary_residual: f64,
    /// Apodization rate used in the Fourier transform.
    pub eta: f64,
}

impl SpectrumTable {
    /// Trapezoidal integral of A over the grid; 1 up to grid truncation.
    pub fn sum_rule(&self) -> f64 {
        trapezoid(&self.omega, &self.values)
    }
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Time-domain correlations entering the spectral function: the two
/// positive-time orderings and the combined negative-time branch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CorrelationPair {
    pub times: Vec<f64>,
    pub c1: Vec<Complex64>,
    pub c2: Vec<Complex64>,
    /// G(-t) = Tr[s^dag e^{Lt}({s, rho})]; equals conj(c1 + c2) whenever the
    /// steady state is Hermitian.
    pub negative: Vec<Complex64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SpectrumOptions {
    pub t_max: f64,
    pub dt: f64,
    /// Exponential apodization e^{-eta t} suppressing truncation ringing.
    pub eta: f64,
    /// Error out when |C(t_max)| exceeds this fraction of |C(0)|.
    pub decay_threshold: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        SpectrumOptions {
            t_max: 40.0,
            dt: 0.02,
            eta: 1e-3,
            decay_threshold: 1e-2,
        }
    }
}

/// A(w) = (1/2 pi) Int dt e^{i w t} <{s(t), s^dag(0)}> assembled from three
/// regression propagations: C1(t) = <s(t) s^dag(0)> = Tr[s e^{Lt}(s^dag rho)],
/// C2(t) = <s^dag(0) s(t)> = Tr[s e^{Lt}(rho s^dag)], and the negative-time
/// branch G(-t) = Tr[s^dag e^{Lt}({s, rho})]. No hermiticity of the steady
/// state is assumed, so the residual imaginary part of the transform is a
/// genuine diagnostic of the unphysical-bath error; e^{-eta t} apodization
/// suppresses truncation ringing.
pub fn spectral_function(
    liouv: &mut Liouvillian,
    rho_ss: &AugmentedState,
    system: &SystemSpec,
    spin: usize,
    omega: &[f64],
    opts: &SpectrumOptions,
    evolve_opts: &EvolveOptions,
) -> CrateResult<(SpectrumTable, CorrelationPair)> {
    if omega.len() < 2 {
        return Err(PfError::InvalidParameter("need at least two frequencies".into()));
    }
    let layout = liouv.layout.clone();
    // any lead works for the coupling operator shape; spin selects the mode
    let s_op = system.coupling_operator(&layout, 0, spin)?;
    let s_dag = s_op.adjoint();
    let n_t = (opts.t_max / opts.dt).round() as usize + 1;
    let times: Vec<f64> = (0..n_t).map(|i| i as f64 * opts.dt).collect();

    // C1(t) = Tr[s e^{Lt}(s^dag rho)]
    let c1 = two_time_correlation(liouv, rho_ss, &s_op, &s_dag, &times, evolve_opts)?;
    // C2(t) = <s^dag(0) s(t)> = Tr[s e^{Lt}(rho s^dag)]
    let x2 = rho_ss.right_mul(&s_dag.mat);
    let c2: Vec<Complex64> = {
        let (states, _) = crate::engine::evolve_operator(liouv, &x2, &times, evolve_opts)?;
        states.iter().map(|x| x.expectation(&s_op.mat)).collect()
    };
    // negative half: G(-t) = Tr[s^dag e^{Lt}(s rho + rho s)]
    let mut x_neg = rho_ss.left_mul(&s_op.mat);
    let x_neg_r = rho_ss.right_mul(&s_op.mat);
    for (a, b) in x_neg.data.iter_mut().zip(&x_neg_r.data) {
        *a += b;
    }
    let negative: Vec<Complex64> = {
        let (states, _) = crate::engine::evolve_operator(liouv, &x_neg, &times, evolve_opts)?;
        states.iter().map(|x| x.expectation(&s_dag.mat)).collect()
    };

    let g_pos: Vec<Complex64> = c1.iter().zip(&c2).map(|(a, b)| a + b).collect();
    let g0 = g_pos[0].norm().max(1e-300);
    let g_end = g_pos.last().unwrap().norm().max(negative.last().unwrap().norm());
    if g_end / g0 > opts.decay_threshold {
        return Err(PfError::InsufficientTmax {
            ratio: g_end / g0,
            threshold: opts.decay_threshold,
        });
    }

    let mut values = Vec::with_capacity(omega.len());
    let mut max_im: f64 = 0.0;
    let mut max_re: f64 = 0.0;
    for &w in omega {
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, &t) in times.iter().enumerate() {
            let weight = if i == 0 || i == n_t - 1 { 0.5 } else { 1.0 };
            acc += weight * g_pos[i] * (Complex64::new(-opts.eta * t, w * t)).exp();
            acc += weight * negative[i] * (Complex64::new(-opts.eta * t, -w * t)).exp();
        }
        acc *= opts.dt / (2.0 * std::f64::consts::PI);
        values.push(acc.re);
        max_im = max_im.max(acc.im.abs());
        max_re = max_re.max(acc.re.abs());
    }
    let table = SpectrumTable {
        spin,
        omega: omega.to_vec(),
        values,
        imaginary_residual: max_im / max_re.max(1e-300),
        eta: opts.eta,
    };
    let pair = CorrelationPair {
        times,
        c1,
        c2,
        negative,
    };
    Ok((table, pair))
}

/// Indices of local maxima of `values` that exceed `min_height`.
pub fn find_peaks(values: &[f64], min_height: f64) -> Vec<usize> {
    let mut peaks = Vec::new();
    for i in 1..values.len().saturating_sub(1) {
        if values[i] > values[i - 1] && values[i] >= values[i + 1] && values[i] > min_height {
            peaks.push(i);
        }
    }
    peaks
}
