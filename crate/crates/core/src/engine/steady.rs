//! Steady-state solve: the generator's null vector with unit trace.
//!
//! The singular system L rho = 0, Tr rho = 1 is regularized by a rank-one
//! trace shift: M = L + (s/D) vec(I) vec(I)^T satisfies M rho_ss = (s/D) vec(I)
//! for the unique trace-one null vector, and M is nonsingular exactly when the
//! null space is one-dimensional. Solved by sparse LU when the superoperator
//! fits in memory, by matrix-free restarted GMRES otherwise.

use faer::prelude::*;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{AugmentedState, Liouvillian};
use crate::error::{PfError, Result};
use crate::util::SplitMix64;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyOptions {
    /// Residual acceptance: ||L rho|| <= factor * ||L|| * ||rho|| (inf norms).
    pub residual_factor: f64,
    /// Largest vectorized dimension assembled for LU.
    pub assemble_cap: usize,
    /// Run the extra probe solve checking null-space uniqueness.
    pub check_uniqueness: bool,
    /// Relative disagreement above which the probe declares degeneracy.
    /// Regulated baths legitimately reach ~eps * |Delta|^2, so the default is
    /// generous; genuine degeneracy shows up at O(1) and beyond.
    pub uniqueness_tol: f64,
    pub gmres_restart: usize,
    pub gmres_max_iters: usize,
    pub seed: u64,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        SteadyOptions {
            residual_factor: 1e-9,
            assemble_cap: 1 << 17,
            check_uniqueness: true,
            uniqueness_tol: 0.5,
            gmres_restart: 80,
            gmres_max_iters: 20_000,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SteadyReport {
    pub residual_inf: f64,
    pub residual_bound: f64,
    pub generator_norm_inf: f64,
    /// Relative disagreement between two solves whose exact solutions
    /// coincide for a one-dimensional null space; None when the probe is
    /// disabled.
    pub uniqueness_deviation: Option<f64>,
    pub method: String,
}

pub fn steady_state(liouv: &mut Liouvillian) -> Result<(AugmentedState, SteadyReport)> {
    steady_state_with(liouv, &SteadyOptions::default())
}

pub fn steady_state_with(
    liouv: &mut Liouvillian,
    opts: &SteadyOptions,
) -> Result<(AugmentedState, SteadyReport)> {
    if liouv.n_dissipators() == 0 {
        return Err(PfError::DegenerateNullSpace(
            "purely Hamiltonian generator: every spectral projector is stationary".into(),
        ));
    }
    let d = liouv.dim();
    let n = liouv.superop_dim();
    if n <= opts.assemble_cap {
        liouv.assemble()?;
    }
    let scale = liouv.norm_inf().max(1e-300);
    let shift = scale / d as f64;

    let shifted_apply = |x: &[Complex64], y: &mut [Complex64]| {
        liouv.apply(x, y);
        let tr: Complex64 = (0..d).map(|i| x[i * d + i]).sum();
        for i in 0..d {
            y[i * d + i] += shift * tr;
        }
    };

    let mut rhs = vec![Complex64::new(0.0, 0.0); n];
    for i in 0..d {
        rhs[i * d + i] = Complex64::new(shift, 0.0);
    }

    let (mut x, probe, method) = if n <= opts.assemble_cap {
        let mut trips = liouv.assembled().unwrap().triplets();
        for i in 0..d {
            for j in 0..d {
                trips.push((i * (d + 1), j * (d + 1), Complex64::new(shift, 0.0)));
            }
        }
        let m = crate::sparse::CsMat::from_triplets(n, n, trips);
        let faer_m = m.to_faer()?;
        // a structurally singular matrix makes the factorization panic, which
        // is exactly the degenerate-null-space case
        let lu = std::panic::catch_unwind(std::panic::AssertUnwindSafe(|| faer_m.sp_lu()))
            .map_err(|_| {
                PfError::DegenerateNullSpace("LU factorization hit a zero pivot".into())
            })?
            .map_err(|e| PfError::DegenerateNullSpace(format!("LU factorization failed: {e:?}")))?;
        let mut b = faer::Mat::<Complex64>::zeros(n, 1);
        for i in 0..d {
            b[(i * (d + 1), 0)] = Complex64::new(shift, 0.0);
        }
        lu.solve_in_place(b.as_mut());
        let mut x: Vec<Complex64> = (0..n).map(|i| b[(i, 0)]).collect();
        // iterative refinement: the shifted systems are ill-conditioned for
        // large regulators, and one or two corrections recover most of it
        for _ in 0..2 {
            let mut mx = vec![Complex64::new(0.0, 0.0); n];
            shifted_apply(&x, &mut mx);
            let mut resid = faer::Mat::<Complex64>::zeros(n, 1);
            for i in 0..n {
                resid[(i, 0)] = rhs[i] - mx[i];
            }
            lu.solve_in_place(resid.as_mut());
            for i in 0..n {
                x[i] += resid[(i, 0)];
            }
        }

        // Second solve whose exact solution is x + r for a traceless random
        // r: M (x + r) = rhs + L r. Any deviation beyond conditioning noise
        // means the null space is not one-dimensional.
        let probe = if opts.check_uniqueness {
            let mut rng = SplitMix64::new(opts.seed);
            let mut r = vec![Complex64::new(0.0, 0.0); n];
            for v in r.iter_mut() {
                *v = Complex64::new(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
            }
            // remove the trace so the shift term is untouched
            let tr_r: Complex64 = (0..d).map(|i| r[i * d + i]).sum();
            for i in 0..d {
                r[i * d + i] -= tr_r / d as f64;
            }
            let mut lr = vec![Complex64::new(0.0, 0.0); n];
            liouv.apply(&r, &mut lr);
            let mut b2 = faer::Mat::<Complex64>::zeros(n, 1);
            for i in 0..n {
                b2[(i, 0)] = rhs[i] + lr[i];
            }
            lu.solve_in_place(b2.as_mut());
            let scale = x.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1e-300);
            let dev = (0..n)
                .map(|i| (b2[(i, 0)] - r[i] - x[i]).norm())
                .fold(0.0, f64::max)
                / scale;
            Some(dev)
        } else {
            None
        };
        (x, probe, "sparse-lu")
    } else {
        let x = gmres(&shifted_apply, &rhs, n, opts)?;
        (x, None, "gmres")
    };

    // trace-normalize (the shift already pins it to 1 up to solver error)
    let tr: Complex64 = (0..d).map(|i| x[i * d + i]).sum();
    if tr.norm() < 1e-12 {
        return Err(PfError::DegenerateNullSpace(
            "steady solve returned a traceless vector".into(),
        ));
    }
    for v in &mut x {
        *v /= tr;
    }

    // residual against the raw generator
    let mut lx = vec![Complex64::new(0.0, 0.0); n];
    liouv.apply(&x, &mut lx);
    let residual_inf = lx.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let x_inf = x.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let residual_bound = opts.residual_factor * scale * x_inf;
    if residual_inf > residual_bound {
        return Err(PfError::NoConvergence(format!(
            "steady-state residual {residual_inf:e} exceeds {residual_bound:e}"
        )));
    }

    if let Some(dev) = probe {
        if dev > opts.uniqueness_tol {
            return Err(PfError::DegenerateNullSpace(format!(
                "two solves with a common exact solution disagree by {dev:e} (relative)"
            )));
        }
    }

    Ok((
        AugmentedState::from_vec(d, x)?,
        SteadyReport {
            residual_inf,
            residual_bound,
            generator_norm_inf: scale,
            uniqueness_deviation: probe,
            method: method.into(),
        },
    ))
}

/// Restarted GMRES with modified Gram-Schmidt, matrix-free.
fn gmres<F: Fn(&[Complex64], &mut [Complex64])>(
    apply: &F,
    rhs: &[Complex64],
    n: usize,
    opts: &SteadyOptions,
) -> Result<Vec<Complex64>> {
    let m = opts.gmres_restart;
    let tol = 1e-11;
    let b_norm = norm2(rhs).max(1e-300);
    let mut x = vec![Complex64::new(0.0, 0.0); n];
    let mut total_iters = 0usize;

    loop {
        let mut r = vec![Complex64::new(0.0, 0.0); n];
        apply(&x, &mut r);
        for i in 0..n {
            r[i] = rhs[i] - r[i];
        }
        let beta = norm2(&r);
        if beta / b_norm < tol {
            return Ok(x);
        }
        if total_iters >= opts.gmres_max_iters {
            return Err(PfError::NoConvergence(format!(
                "GMRES stalled at relative residual {:e} after {total_iters} iterations",
                beta / b_norm
            )));
        }

        let mut basis: Vec<Vec<Complex64>> = vec![r.iter().map(|v| v / beta).collect()];
        let mut h = vec![vec![Complex64::new(0.0, 0.0); m]; m + 1];
        let mut cs = vec![Complex64::new(0.0, 0.0); m];
        let mut sn = vec![Complex64::new(0.0, 0.0); m];
        let mut g = vec![Complex64::new(0.0, 0.0); m + 1];
        g[0] = Complex64::new(beta, 0.0);
        let mut k_used = 0usize;

        for k in 0..m {
            total_iters += 1;
            let mut w = vec![Complex64::new(0.0, 0.0); n];
            apply(&basis[k], &mut w);
            for j in 0..=k {
                let hjk: Complex64 = basis[j]
                    .iter()
                    .zip(&w)
                    .map(|(v, wi)| v.conj() * wi)
                    .sum();
                h[j][k] = hjk;
                for (wi, vj) in w.iter_mut().zip(&basis[j]) {
                    *wi -= hjk * vj;
                }
            }
            let wnorm = norm2(&w);
            h[k + 1][k] = Complex64::new(wnorm, 0.0);

            // apply accumulated Givens rotations, then form a new one
            for j in 0..k {
                let t = cs[j].conj() * h[j][k] + sn[j].conj() * h[j + 1][k];
                h[j + 1][k] = -sn[j] * h[j][k] + cs[j] * h[j + 1][k];
                h[j][k] = t;
            }
            let denom = (h[k][k].norm_sqr() + h[k + 1][k].norm_sqr()).sqrt();
            if denom > 0.0 {
                cs[k] = h[k][k].conj() / denom;
                sn[k] = h[k + 1][k].conj() / denom;
                h[k][k] = Complex64::new(denom, 0.0);
                h[k + 1][k] = Complex64::new(0.0, 0.0);
                let t = cs[k].conj() * g[k];
                g[k + 1] = -sn[k] * g[k];
                g[k] = t;
                // note: cs stored conjugated for the column update above
                cs[k] = cs[k].conj();
                sn[k] = sn[k].conj();
            }
            k_used = k + 1;
            let rel = g[k + 1].norm() / b_norm;
            if rel < tol || wnorm < 1e-14 {
                break;
            }
            if k + 1 < m {
                basis.push(w.iter().map(|v| v / wnorm).collect());
            }
        }

        // back substitution and solution update
        let mut yk = vec![Complex64::new(0.0, 0.0); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_used {
                s -= h[i][j] * yk[j];
            }
            yk[i] = s / h[i][i];
        }
        for (j, yj) in yk.iter().enumerate() {
            for i in 0..n {
                x[i] += yj * basis[j][i];
            }
        }
    }
}

fn norm2(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
