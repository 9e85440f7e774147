//! Time propagation of vectorized states: adaptive Dormand-Prince 5(4) for
//! non-stiff generators, and TR-BDF2 (L-stable, one factorization per step
//! size) when large regulator occupations make the generator stiff.

use faer::prelude::*;
use faer::sparse::SparseColMat;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{AugmentedState, Liouvillian};
use crate::error::{PfError, Result};
use crate::sparse::CsMat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IntegratorKind {
    /// Pick explicit or implicit from a stiffness estimate.
    Auto,
    AdaptiveRk,
    TrBdf2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveOptions {
    pub rtol: f64,
    pub atol: f64,
    pub method: IntegratorKind,
    /// Fixed step for TR-BDF2; defaults to an eighth of the smallest output
    /// spacing.
    pub dt: Option<f64>,
    pub max_steps: usize,
    /// Largest vectorized dimension the implicit path may assemble.
    pub assemble_cap: usize,
}

impl Default for EvolveOptions {
    fn default() -> Self {
        EvolveOptions {
            rtol: 1e-8,
            atol: 1e-10,
            method: IntegratorKind::Auto,
            dt: None,
            max_steps: 50_000_000,
            assemble_cap: 1 << 17,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvolveReport {
    pub method: String,
    pub steps: usize,
    pub rhs_evaluations: usize,
    /// Largest |Tr rho - 1| over the outputs; None when the propagated object
    /// is not a density operator.
    pub max_trace_deviation: Option<f64>,
}

fn choose_method(liouv: &Liouvillian, times: &[f64], opts: &EvolveOptions) -> IntegratorKind {
    match opts.method {
        IntegratorKind::Auto => {
            let t_span = times.last().copied().unwrap_or(0.0);
            // explicit stability needs dt ~ 3 / |rate|; switch when that
            // implies an unreasonable step count and assembly is feasible
            let explicit_steps = liouv.max_rate() * t_span / 3.0;
            if explicit_steps > 50_000.0 && liouv.superop_dim() <= opts.assemble_cap {
                IntegratorKind::TrBdf2
            } else {
                IntegratorKind::AdaptiveRk
            }
        }
        other => other,
    }
}

pub(super) fn evolve_impl(
    liouv: &mut Liouvillian,
    x0: &AugmentedState,
    times: &[f64],
    opts: &EvolveOptions,
    track_trace: bool,
) -> Result<(Vec<AugmentedState>, EvolveReport)> {
    if x0.dim != liouv.dim() {
        return Err(PfError::DimensionMismatch(format!(
            "state dim {} vs generator dim {}",
            x0.dim,
            liouv.dim()
        )));
    }
    if times.is_empty() {
        return Err(PfError::InvalidParameter("no output times requested".into()));
    }
    if times[0] < 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PfError::InvalidParameter(
            "output times must be strictly increasing and start at t >= 0".into(),
        ));
    }
    let method = choose_method(liouv, times, opts);
    let (states, steps, evals, label) = match method {
        IntegratorKind::AdaptiveRk => {
            let (s, n, e) = dormand_prince(liouv, x0, times, opts)?;
            (s, n, e, "dormand-prince-5(4)")
        }
        IntegratorKind::TrBdf2 => {
            let (s, n, e) = tr_bdf2(liouv, x0, times, opts)?;
            (s, n, e, "tr-bdf2")
        }
        IntegratorKind::Auto => unreachable!(),
    };
    let max_trace_deviation = track_trace.then(|| {
        states
            .iter()
            .map(|s| (s.trace() - Complex64::new(1.0, 0.0)).norm())
            .fold(0.0, f64::max)
    });
    Ok((
        states,
        EvolveReport {
            method: label.into(),
            steps,
            rhs_evaluations: evals,
            max_trace_deviation,
        },
    ))
}

// Dormand-Prince 5(4) tableau.
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 35.0 / 384.0 - 5179.0 / 57600.0;
const E3: f64 = 500.0 / 1113.0 - 7571.0 / 16695.0;
const E4: f64 = 125.0 / 192.0 - 393.0 / 640.0;
const E5: f64 = -2187.0 / 6784.0 - -92097.0 / 339200.0;
const E6: f64 = 11.0 / 84.0 - 187.0 / 2100.0;
const E7: f64 = -1.0 / 40.0;

fn lincomb(out: &mut [Complex64], y: &[Complex64], h: f64, parts: &[(f64, &[Complex64])]) {
    for i in 0..out.len() {
        let mut acc = y[i];
        for (c, k) in parts {
            acc += h * c * k[i];
        }
        out[i] = acc;
    }
}

fn dormand_prince(
    liouv: &Liouvillian,
    x0: &AugmentedState,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<(Vec<AugmentedState>, usize, usize)> {
    let n = liouv.superop_dim();
    let mut y = x0.data.clone();
    let mut t = 0.0f64;
    let t_end = *times.last().unwrap();

    let mut k1 = vec![Complex64::new(0.0, 0.0); n];
    let mut k2 = k1.clone();
    let mut k3 = k1.clone();
    let mut k4 = k1.clone();
    let mut k5 = k1.clone();
    let mut k6 = k1.clone();
    let mut k7 = k1.clone();
    let mut ytmp = k1.clone();
    let mut y5 = k1.clone();
    let mut evals = 0usize;

    liouv.apply(&y, &mut k1);
    evals += 1;

    // initial step from the first derivative scale
    let y_scale = y.iter().map(|v| v.norm()).fold(0.0, f64::max).max(opts.atol);
    let f_scale = k1.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let mut h = if f_scale > 0.0 {
        (0.01 * y_scale / f_scale).min(t_end / 10.0)
    } else {
        t_end / 100.0
    }
    .max(t_end * 1e-12);

    let mut out = Vec::with_capacity(times.len());
    let mut next_out = 0usize;
    while next_out < times.len() && times[next_out] <= t + 1e-300 {
        out.push(AugmentedState::from_vec(liouv.dim(), y.clone())?);
        next_out += 1;
    }

    let mut steps = 0usize;
    while next_out < times.len() {
        if steps >= opts.max_steps {
            return Err(PfError::NoConvergence(format!(
                "integrator exceeded {} steps at t = {t}",
                opts.max_steps
            )));
        }
        // land exactly on the next output time
        let target = times[next_out];
        if t + h > target {
            h = target - t;
        }
        if h < 1e-14 * t_end.max(1.0) {
            return Err(PfError::StepSizeUnderflow { t, dt: h });
        }

        lincomb(&mut ytmp, &y, h, &[(A21, &k1)]);
        liouv.apply(&ytmp, &mut k2);
        lincomb(&mut ytmp, &y, h, &[(A31, &k1), (A32, &k2)]);
        liouv.apply(&ytmp, &mut k3);
        lincomb(&mut ytmp, &y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]);
        liouv.apply(&ytmp, &mut k4);
        lincomb(&mut ytmp, &y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]);
        liouv.apply(&ytmp, &mut k5);
        lincomb(
            &mut ytmp,
            &y,
            h,
            &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
        );
        liouv.apply(&ytmp, &mut k6);
        lincomb(
            &mut y5,
            &y,
            h,
            &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)],
        );
        liouv.apply(&y5, &mut k7);
        evals += 6;

        // scaled RMS error over the embedded 4th-order solution
        let mut err_sq = 0.0f64;
        for i in 0..n {
            let e = h
                * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let scale = opts.atol + opts.rtol * y[i].norm().max(y5[i].norm());
            err_sq += (e.norm() / scale).powi(2);
        }
        let err = (err_sq / n as f64).sqrt();

        if err <= 1.0 {
            t += h;
            std::mem::swap(&mut y, &mut y5);
            std::mem::swap(&mut k1, &mut k7); // FSAL
            steps += 1;
            while next_out < times.len() && (times[next_out] - t).abs() <= 1e-12 * t.max(1.0) {
                out.push(AugmentedState::from_vec(liouv.dim(), y.clone())?);
                next_out += 1;
            }
        }
        let factor = if err == 0.0 {
            5.0
        } else {
            (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
        };
        h *= factor;
    }
    Ok((out, steps, evals))
}

/// One LU factorization of (I - beta dt L) serves both implicit stages.
struct TrBdf2Workspace {
    dt: f64,
    lu: faer::sparse::linalg::solvers::Lu<usize, Complex64>,
}

const TRBDF2_GAMMA: f64 = 2.0 - std::f64::consts::SQRT_2;

fn build_stage_matrix(l_mat: &CsMat, dt: f64) -> Result<SparseColMat<usize, Complex64>> {
    let beta = 1.0 - 1.0 / std::f64::consts::SQRT_2; // = gamma/2 = (1-gamma)/(2-gamma)
    let n = l_mat.nrows();
    let scaled = l_mat.scaled(Complex64::new(-beta * dt, 0.0));
    let m = scaled.add(&CsMat::identity(n))?;
    m.to_faer()
}

fn tr_bdf2(
    liouv: &mut Liouvillian,
    x0: &AugmentedState,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<(Vec<AugmentedState>, usize, usize)> {
    let n = liouv.superop_dim();
    if n > opts.assemble_cap {
        return Err(PfError::DimensionMismatch(format!(
            "implicit integration needs assembly: dimension {n} exceeds cap {}",
            opts.assemble_cap
        )));
    }
    liouv.assemble()?;

    let min_spacing = std::iter::once(times[0])
        .chain(times.windows(2).map(|w| w[1] - w[0]))
        .filter(|&s| s > 0.0)
        .fold(f64::INFINITY, f64::min);
    if !min_spacing.is_finite() && opts.dt.is_none() {
        return Err(PfError::InvalidParameter(
            "TR-BDF2 needs a positive output spacing or an explicit dt".into(),
        ));
    }
    let dt_target = opts.dt.unwrap_or(min_spacing / 8.0);

    let gamma = TRBDF2_GAMMA;
    let c1 = 1.0 / (gamma * (2.0 - gamma));
    let c2 = (1.0 - gamma).powi(2) / (gamma * (2.0 - gamma));
    let beta = 1.0 - 1.0 / std::f64::consts::SQRT_2;

    let mut y = x0.data.clone();
    let mut t = 0.0f64;
    let mut out = Vec::with_capacity(times.len());
    let mut next_out = 0usize;
    while next_out < times.len() && times[next_out] <= t + 1e-300 {
        out.push(AugmentedState::from_vec(liouv.dim(), y.clone())?);
        next_out += 1;
    }

    let mut ws: Option<TrBdf2Workspace> = None;
    let mut steps = 0usize;
    let mut evals = 0usize;
    let mut ly = vec![Complex64::new(0.0, 0.0); n];
    let mut rhs = faer::Mat::<Complex64>::zeros(n, 1);

    while next_out < times.len() {
        let target = times[next_out];
        let span = target - t;
        let n_sub = (span / dt_target).ceil().max(1.0) as usize;
        let dt = span / n_sub as f64;
        let rebuild = match &ws {
            Some(w) => (w.dt - dt).abs() > 1e-12 * dt,
            None => true,
        };
        if rebuild {
            let mat = build_stage_matrix(liouv.assembled().unwrap(), dt)?;
            let lu = mat
                .sp_lu()
                .map_err(|e| PfError::NoConvergence(format!("stage factorization failed: {e:?}")))?;
            ws = Some(TrBdf2Workspace { dt, lu });
        }
        let lu = &ws.as_ref().unwrap().lu;

        for _ in 0..n_sub {
            if steps >= opts.max_steps {
                return Err(PfError::NoConvergence(format!(
                    "integrator exceeded {} steps at t = {t}",
                    opts.max_steps
                )));
            }
            // TR stage: (I - beta dt L) u* = u + beta dt L u
            liouv.apply(&y, &mut ly);
            evals += 1;
            for i in 0..n {
                rhs[(i, 0)] = y[i] + beta * dt * ly[i];
            }
            lu.solve_in_place(rhs.as_mut());
            // BDF2 stage: (I - beta dt L) u_next = c1 u* - c2 u
            for i in 0..n {
                rhs[(i, 0)] = c1 * rhs[(i, 0)] - c2 * y[i];
            }
            lu.solve_in_place(rhs.as_mut());
            for i in 0..n {
                y[i] = rhs[(i, 0)];
            }
            steps += 1;
        }
        t = target;
        out.push(AugmentedState::from_vec(liouv.dim(), y.clone())?);
        next_out += 1;
    }
    Ok((out, steps, evals))
}
