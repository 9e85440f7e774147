//! Assembly and solution of the parity-resolved Lindblad master equation on
//! the augmented (system + pseudo-fermion) Fock space.
//!
//! The generator is
//!
//!   d rho/dt = -i [H, rho]
//!     + sum_j Gamma_j { (1-n_j) D^r_{c_j}[rho^r] + n_j D^r_{c_j^dag}[rho^r] },
//!
//! with D^r_O[x] = 2 r O x O^dag - O^dag O x - x O^dag O acting on the parity
//! component rho^r = (rho + r P rho P)/2. Summing the two parity branches
//! collapses the jump term onto 2 (O P) rho (P O^dag), so the whole generator
//! is a sum of two-sided products A rho B with sparse factors; even and odd
//! components of any argument are automatically evolved with their correct
//! sign, which is what two-time correlations rely on.
//!
//! No parameter is complex-conjugated during assembly: couplings, frequencies,
//! damping rates and occupations enter exactly as given (pseudo-Schroedinger
//! convention). Daggers denote the matrix adjoint of the concrete Fock
//! operators only.

mod integrate;
mod steady;

pub use integrate::{EvolveOptions, EvolveReport, IntegratorKind};
pub use steady::{steady_state, steady_state_with, SteadyOptions, SteadyReport};

use std::collections::BTreeMap;

use num_complex::Complex64;

use crate::error::{PfError, Result};
use crate::fock::{
    annihilation, creation, number, parity_operator, FockOperator, FockSpaceLayout, ModeLabel,
    OperatorParity,
};
use crate::pf::{PseudoFermionBath, PseudoFermionMode};
use crate::sparse::CsMat;

/// Impurity model choices.
#[derive(Debug, Clone)]
pub enum SystemModel {
    /// H_S = epsilon s^dag s, one spinless level.
    SingleLevel { epsilon: f64 },
    /// H_S = epsilon (n_up + n_dn) + U n_up n_dn, two spin-labelled levels.
    Anderson { epsilon: f64, u: f64 },
    /// Caller-supplied Hamiltonian and coupling operators on the system
    /// subspace (dimension 2^n_modes).
    Explicit {
        n_modes: usize,
        hamiltonian: CsMat,
        couplings: BTreeMap<(usize, usize), CsMat>,
    },
}

#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub model: SystemModel,
}

impl SystemSpec {
    pub fn single_level(epsilon: f64) -> Self {
        SystemSpec {
            model: SystemModel::SingleLevel { epsilon },
        }
    }

    pub fn anderson(epsilon: f64, u: f64) -> Self {
        SystemSpec {
            model: SystemModel::Anderson { epsilon, u },
        }
    }

    pub fn n_modes(&self) -> usize {
        match &self.model {
            SystemModel::SingleLevel { .. } => 1,
            SystemModel::Anderson { .. } => 2,
            SystemModel::Explicit { n_modes, .. } => *n_modes,
        }
    }

    /// Spin channels the system couples to.
    pub fn spins(&self) -> Vec<usize> {
        match &self.model {
            SystemModel::SingleLevel { .. } => vec![0],
            SystemModel::Anderson { .. } => vec![0, 1],
            SystemModel::Explicit { couplings, .. } => {
                let mut spins: Vec<usize> = couplings.keys().map(|&(_, s)| s).collect();
                spins.sort_unstable();
                spins.dedup();
                spins
            }
        }
    }

    /// System Hamiltonian embedded in the full space.
    pub fn hamiltonian(&self, layout: &FockSpaceLayout) -> Result<FockOperator> {
        match &self.model {
            SystemModel::SingleLevel { epsilon } => {
                Ok(number(layout, 0)?.scaled(Complex64::new(*epsilon, 0.0)))
            }
            SystemModel::Anderson { epsilon, u } => {
                let n_up = number(layout, 0)?;
                let n_dn = number(layout, 1)?;
                let quadratic = n_up.add(&n_dn)?.scaled(Complex64::new(*epsilon, 0.0));
                let quartic = n_up.mul(&n_dn)?.scaled(Complex64::new(*u, 0.0));
                quadratic.add(&quartic)
            }
            SystemModel::Explicit { n_modes, hamiltonian, .. } => {
                embed_system_operator(hamiltonian, *n_modes, layout, OperatorParity::Even)
            }
        }
    }

    /// Coupling operator s_nu for the given lead and spin channel, in the full
    /// space. System modes sit on the lowest Jordan-Wigner positions, so the
    /// embedding is exact for odd operators too.
    pub fn coupling_operator(
        &self,
        layout: &FockSpaceLayout,
        lead: usize,
        spin: usize,
    ) -> Result<FockOperator> {
        match &self.model {
            SystemModel::SingleLevel { .. } => {
                if spin != 0 {
                    return Err(PfError::LayoutMismatch(format!(
                        "single-level system has no spin channel {spin}"
                    )));
                }
                annihilation(layout, 0)
            }
            SystemModel::Anderson { .. } => {
                if spin > 1 {
                    return Err(PfError::LayoutMismatch(format!(
                        "Anderson system has no spin channel {spin}"
                    )));
                }
                annihilation(layout, spin)
            }
            SystemModel::Explicit { n_modes, couplings, .. } => {
                let op = couplings.get(&(lead, spin)).ok_or_else(|| {
                    PfError::LayoutMismatch(format!(
                        "no coupling operator for lead {lead}, spin {spin}"
                    ))
                })?;
                embed_system_operator(op, *n_modes, layout, OperatorParity::Odd)
            }
        }
    }
}

fn embed_system_operator(
    op: &CsMat,
    n_sys: usize,
    layout: &FockSpaceLayout,
    parity: OperatorParity,
) -> Result<FockOperator> {
    let dim_sys = 1usize << n_sys;
    if op.nrows() != dim_sys || op.ncols() != dim_sys {
        return Err(PfError::DimensionMismatch(format!(
            "system operator is {}x{}, expected {dim_sys}x{dim_sys}",
            op.nrows(),
            op.ncols()
        )));
    }
    if layout.n_system() != n_sys {
        return Err(PfError::LayoutMismatch(format!(
            "layout has {} system modes, operator assumes {n_sys}",
            layout.n_system()
        )));
    }
    let env_dim = layout.dim() / dim_sys;
    Ok(FockOperator {
        mat: CsMat::identity(env_dim).kron(op),
        parity,
    })
}

/// Layout with system modes first, then every bath's modes in order.
pub fn layout_for(system: &SystemSpec, baths: &[PseudoFermionBath]) -> Result<FockSpaceLayout> {
    layout_for_with_cap(system, baths, crate::fock::DEFAULT_MODE_CAP)
}

pub fn layout_for_with_cap(
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
    cap: usize,
) -> Result<FockSpaceLayout> {
    let mut pseudo = Vec::new();
    for bath in baths {
        for (index, mode) in bath.modes.iter().enumerate() {
            pseudo.push(ModeLabel::Pseudo {
                lead: mode.lead,
                spin: mode.spin,
                index,
            });
        }
    }
    FockSpaceLayout::with_cap(system.n_modes(), pseudo, cap)
}

/// All pseudo modes of all baths, in layout order, with their Fock indices.
pub fn pseudo_mode_table<'a>(
    system: &SystemSpec,
    baths: &'a [PseudoFermionBath],
) -> Vec<(usize, &'a PseudoFermionMode)> {
    let mut out = Vec::new();
    let mut fock_index = system.n_modes();
    for bath in baths {
        for mode in &bath.modes {
            out.push((fock_index, mode));
            fock_index += 1;
        }
    }
    out
}

/// Augmented Hamiltonian H_S + sum_j Omega_j c_j^dag c_j
/// + sum_j lambda_j (s_nu c_j^dag + c_j s_nu^dag). Non-Hermitian whenever mode
/// parameters are complex.
pub fn build_hamiltonian(
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
    layout: &FockSpaceLayout,
) -> Result<FockOperator> {
    check_layout(system, baths, layout)?;
    let mut h = system.hamiltonian(layout)?;
    for (idx, mode) in pseudo_mode_table(system, baths) {
        let n_j = number(layout, idx)?;
        h = h.add(&n_j.scaled(mode.frequency))?;
        if mode.coupling == Complex64::new(0.0, 0.0) {
            // detached mode: dissipator only
            continue;
        }
        let s = system.coupling_operator(layout, mode.lead, mode.spin)?;
        let c_dag = creation(layout, idx)?;
        let c = annihilation(layout, idx)?;
        let hop = s.mul(&c_dag)?.add(&c.mul(&s.adjoint())?)?;
        h = h.add(&hop.scaled(mode.coupling))?;
    }
    Ok(h)
}

/// One two-sided product term: coeff * A rho B. `None` factors are identities.
#[derive(Debug, Clone)]
pub struct SuperTerm {
    pub coeff: Complex64,
    pub left: Option<CsMat>,
    /// Transpose of the right factor (CSC access to B by column).
    pub right_t: Option<CsMat>,
}

/// The assembled-or-term-wise generator.
#[derive(Debug, Clone)]
pub struct Liouvillian {
    pub layout: FockSpaceLayout,
    dim: usize,
    terms: Vec<SuperTerm>,
    assembled: Option<CsMat>,
    /// Largest dissipator coefficient magnitude; stiffness indicator.
    max_rate: f64,
    n_dissipators: usize,
}

impl Liouvillian {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn superop_dim(&self) -> usize {
        self.dim * self.dim
    }

    pub fn terms(&self) -> &[SuperTerm] {
        &self.terms
    }

    pub fn max_rate(&self) -> f64 {
        self.max_rate
    }

    /// Number of jump channels; zero means purely Hamiltonian flow.
    pub fn n_dissipators(&self) -> usize {
        self.n_dissipators
    }

    pub fn is_assembled(&self) -> bool {
        self.assembled.is_some()
    }

    pub fn assembled(&self) -> Option<&CsMat> {
        self.assembled.as_ref()
    }

    /// Assemble the 4^N sparse matrix (column-stacking convention).
    pub fn assemble(&mut self) -> Result<&CsMat> {
        if self.assembled.is_none() {
            let d2 = self.superop_dim();
            let mut total = CsMat::zeros(d2, d2);
            for term in &self.terms {
                let id = CsMat::identity(self.dim);
                let left = term.left.as_ref().unwrap_or(&id);
                let right_t = term.right_t.as_ref().unwrap_or(&id);
                let piece = right_t.kron(left).scaled(term.coeff);
                total = total.add(&piece)?;
            }
            self.assembled = Some(total);
        }
        Ok(self.assembled.as_ref().unwrap())
    }

    /// y = L x on the vectorized state.
    pub fn apply(&self, x: &[Complex64], y: &mut [Complex64]) {
        assert_eq!(x.len(), self.superop_dim());
        assert_eq!(y.len(), self.superop_dim());
        if let Some(mat) = &self.assembled {
            use rayon::prelude::*;
            let chunk = self.dim;
            y.par_chunks_mut(chunk).enumerate().for_each(|(block, out)| {
                for (r, slot) in out.iter_mut().enumerate() {
                    let row = block * chunk + r;
                    let (cols, vals) = mat.row(row);
                    let mut acc = Complex64::new(0.0, 0.0);
                    for (c, v) in cols.iter().zip(vals) {
                        acc += v * x[*c];
                    }
                    *slot = acc;
                }
            });
            return;
        }
        self.apply_terms(x, y);
    }

    /// Matrix-free application: per output column, gather the right-factor
    /// combination and push it through the left factor.
    fn apply_terms(&self, x: &[Complex64], y: &mut [Complex64]) {
        use rayon::prelude::*;
        let d = self.dim;
        y.par_chunks_mut(d).enumerate().for_each(|(col, out)| {
            out.fill(Complex64::new(0.0, 0.0));
            let mut z = vec![Complex64::new(0.0, 0.0); d];
            for term in &self.terms {
                let zslice: &[Complex64] = match &term.right_t {
                    None => &x[col * d..(col + 1) * d],
                    Some(bt) => {
                        z.fill(Complex64::new(0.0, 0.0));
                        let (ks, vs) = bt.row(col);
                        for (k, v) in ks.iter().zip(vs) {
                            let xcol = &x[k * d..(k + 1) * d];
                            for (zi, xi) in z.iter_mut().zip(xcol) {
                                *zi += v * xi;
                            }
                        }
                        &z
                    }
                };
                match &term.left {
                    None => {
                        for (o, zi) in out.iter_mut().zip(zslice) {
                            *o += term.coeff * zi;
                        }
                    }
                    Some(a) => a.matvec_acc(term.coeff, zslice, out),
                }
            }
        });
    }

    /// Infinity norm (assembled) or a term-wise upper bound.
    pub fn norm_inf(&self) -> f64 {
        match &self.assembled {
            Some(m) => m.norm_inf(),
            None => self
                .terms
                .iter()
                .map(|t| {
                    let ln = t.left.as_ref().map_or(1.0, |m| m.norm_inf());
                    let rn = t.right_t.as_ref().map_or(1.0, |m| m.norm_inf());
                    t.coeff.norm() * ln * rn
                })
                .sum(),
        }
    }
}

fn check_layout(
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
    layout: &FockSpaceLayout,
) -> Result<()> {
    let expected = system.n_modes() + baths.iter().map(|b| b.n_modes()).sum::<usize>();
    if layout.n_modes() != expected || layout.n_system() != system.n_modes() {
        return Err(PfError::LayoutMismatch(format!(
            "layout has {} modes ({} system), model needs {expected} ({} system)",
            layout.n_modes(),
            layout.n_system(),
            system.n_modes()
        )));
    }
    Ok(())
}

/// Build the parity-resolved generator as a term list. Assembly into one
/// sparse matrix is deferred until a solver needs it.
pub fn build_liouvillian(
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
    layout: &FockSpaceLayout,
) -> Result<Liouvillian> {
    check_layout(system, baths, layout)?;
    let dim = layout.dim();
    let h = build_hamiltonian(system, baths, layout)?;
    let minus_i = Complex64::new(0.0, -1.0);
    let mut terms = vec![
        SuperTerm {
            coeff: minus_i,
            left: Some(h.mat.clone()),
            right_t: None,
        },
        SuperTerm {
            coeff: -minus_i,
            left: None,
            right_t: Some(h.mat.transpose()),
        },
    ];

    let parity = parity_operator(layout);
    let mut max_rate = 0.0f64;
    let mut n_dissipators = 0usize;
    for (idx, mode) in pseudo_mode_table(system, baths) {
        let c = annihilation(layout, idx)?;
        let c_dag = creation(layout, idx)?;
        let one = Complex64::new(1.0, 0.0);
        for (gamma, op) in [
            (mode.damping * (one - mode.occupation), &c),
            (mode.damping * mode.occupation, &c_dag),
        ] {
            max_rate = max_rate.max(gamma.norm());
            if gamma.norm() > 0.0 {
                n_dissipators += 1;
            }
            let op_dag = op.adjoint();
            // jump: 2 gamma (O P) rho (P O^dag)
            let left = op.mat.matmul(&parity.mat)?;
            let right = parity.mat.matmul(&op_dag.mat)?;
            terms.push(SuperTerm {
                coeff: 2.0 * gamma,
                left: Some(left),
                right_t: Some(right.transpose()),
            });
            // anticommutator: -gamma {O^dag O, rho}
            let odo = op_dag.mat.matmul(&op.mat)?;
            terms.push(SuperTerm {
                coeff: -gamma,
                left: Some(odo.clone()),
                right_t: None,
            });
            terms.push(SuperTerm {
                coeff: -gamma,
                left: None,
                right_t: Some(odo.transpose()),
            });
        }
    }
    Ok(Liouvillian {
        layout: layout.clone(),
        dim,
        terms,
        assembled: None,
        max_rate,
        n_dissipators,
    })
}

/// Density operator (or any operator-valued argument) on the augmented space,
/// stored dense column-major.
#[derive(Debug, Clone)]
pub struct AugmentedState {
    pub dim: usize,
    pub data: Vec<Complex64>,
}

impl AugmentedState {
    pub fn zeros(dim: usize) -> Self {
        AugmentedState {
            dim,
            data: vec![Complex64::new(0.0, 0.0); dim * dim],
        }
    }

    pub fn from_vec(dim: usize, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(PfError::DimensionMismatch(format!(
                "state length {} vs dim {dim}",
                data.len()
            )));
        }
        Ok(AugmentedState { dim, data })
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Complex64 {
        self.data[col * self.dim + row]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Complex64) {
        self.data[col * self.dim + row] = value;
    }

    pub fn trace(&self) -> Complex64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    /// <c_i^dag c_i> from the diagonal; complex for unphysical baths.
    pub fn occupation(&self, mode: usize) -> Complex64 {
        let bit = 1usize << mode;
        (0..self.dim)
            .filter(|s| s & bit != 0)
            .map(|s| self.get(s, s))
            .sum()
    }

    /// Tr[O rho].
    pub fn expectation(&self, op: &CsMat) -> Complex64 {
        let mut acc = Complex64::new(0.0, 0.0);
        for r in 0..self.dim {
            let (cols, vals) = op.row(r);
            for (c, v) in cols.iter().zip(vals) {
                acc += v * self.get(*c, r);
            }
        }
        acc
    }

    /// Partial trace over all pseudo modes: system modes occupy the low bits,
    /// so this is a block sum along the environment diagonal.
    pub fn reduced_system(&self, n_system: usize) -> Vec<Complex64> {
        let ds = 1usize << n_system;
        let blocks = self.dim / ds;
        let mut out = vec![Complex64::new(0.0, 0.0); ds * ds];
        for e in 0..blocks {
            for b in 0..ds {
                for a in 0..ds {
                    out[b * ds + a] += self.get(e * ds + a, e * ds + b);
                }
            }
        }
        out
    }

    /// max_ij |rho_ij - conj(rho_ji)|.
    pub fn hermiticity_deviation(&self) -> f64 {
        let mut dev = 0.0f64;
        for c in 0..self.dim {
            for r in 0..=c {
                dev = dev.max((self.get(r, c) - self.get(c, r).conj()).norm());
            }
        }
        dev
    }

    /// B rho for a sparse operator B.
    pub fn left_mul(&self, op: &CsMat) -> AugmentedState {
        let d = self.dim;
        let mut out = AugmentedState::zeros(d);
        for col in 0..d {
            let x = &self.data[col * d..(col + 1) * d];
            let y = &mut out.data[col * d..(col + 1) * d];
            op.matvec(x, y);
        }
        out
    }

    /// rho B for a sparse operator B (via columns of B).
    pub fn right_mul(&self, op: &CsMat) -> AugmentedState {
        let d = self.dim;
        let bt = op.transpose();
        let mut out = AugmentedState::zeros(d);
        for col in 0..d {
            let (ks, vs) = bt.row(col);
            let y = &mut out.data[col * d..(col + 1) * d];
            for (k, v) in ks.iter().zip(vs) {
                let x = &self.data[k * d..(k + 1) * d];
                for (yi, xi) in y.iter_mut().zip(x) {
                    *yi += v * xi;
                }
            }
        }
        out
    }
}

/// Initial product state rho_S (x) prod_j [(1-n_j)|0><0| + n_j |1><1|].
/// The environment factor is diagonal; complex occupations give a
/// non-Hermitian but exactly trace-one state.
pub fn initial_state(
    rho_system: &[Complex64],
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
    layout: &FockSpaceLayout,
) -> Result<AugmentedState> {
    check_layout(system, baths, layout)?;
    let ds = 1usize << system.n_modes();
    if rho_system.len() != ds * ds {
        return Err(PfError::DimensionMismatch(format!(
            "system state length {} vs dimension {ds}",
            rho_system.len()
        )));
    }
    let tr: Complex64 = (0..ds).map(|i| rho_system[i * ds + i]).sum();
    if (tr - Complex64::new(1.0, 0.0)).norm() > 1e-10 {
        return Err(PfError::InvalidParameter(format!(
            "system state must have unit trace, got {tr}"
        )));
    }
    let modes = pseudo_mode_table(system, baths);
    let n_pf = modes.len();
    let dim = layout.dim();
    let mut state = AugmentedState::zeros(dim);
    for env in 0..(1usize << n_pf) {
        let mut weight = Complex64::new(1.0, 0.0);
        for (j, (_, mode)) in modes.iter().enumerate() {
            weight *= if env & (1 << j) != 0 {
                mode.occupation
            } else {
                Complex64::new(1.0, 0.0) - mode.occupation
            };
        }
        if weight == Complex64::new(0.0, 0.0) {
            continue;
        }
        for b in 0..ds {
            for a in 0..ds {
                let v = rho_system[b * ds + a];
                if v != Complex64::new(0.0, 0.0) {
                    state.set(env * ds + a, env * ds + b, v * weight);
                }
            }
        }
    }
    Ok(state)
}

/// Diagonal system state from per-mode occupations (product form).
pub fn system_state_from_occupations(occupations: &[f64]) -> Vec<Complex64> {
    let n = occupations.len();
    let ds = 1usize << n;
    let mut rho = vec![Complex64::new(0.0, 0.0); ds * ds];
    for s in 0..ds {
        let mut w = 1.0;
        for (j, &occ) in occupations.iter().enumerate() {
            w *= if s & (1 << j) != 0 { occ } else { 1.0 - occ };
        }
        rho[s * ds + s] = Complex64::new(w, 0.0);
    }
    rho
}

/// Propagate an arbitrary operator-valued argument; no trace tracking.
pub fn evolve_operator(
    liouv: &mut Liouvillian,
    x0: &AugmentedState,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<(Vec<AugmentedState>, EvolveReport)> {
    integrate::evolve_impl(liouv, x0, times, opts, false)
}

/// Propagate `rho0` and return the states at the requested times.
pub fn evolve(
    liouv: &mut Liouvillian,
    rho0: &AugmentedState,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<(Vec<AugmentedState>, EvolveReport)> {
    integrate::evolve_impl(liouv, rho0, times, opts, true)
}

/// Tr[A e^{Lt}(B rho)] for odd-parity A and B at each requested time. The
/// odd-parity argument B rho is propagated by the same parity-resolved
/// generator; its odd component picks up the sign-flipped jump branch by
/// construction.
pub fn two_time_correlation(
    liouv: &mut Liouvillian,
    rho_ss: &AugmentedState,
    a: &FockOperator,
    b: &FockOperator,
    times: &[f64],
    opts: &EvolveOptions,
) -> Result<Vec<Complex64>> {
    if a.parity != OperatorParity::Odd || b.parity != OperatorParity::Odd {
        return Err(PfError::ParityViolation(format!(
            "two-time correlation needs odd operators, got {:?} and {:?}",
            a.parity, b.parity
        )));
    }
    if times.iter().any(|&t| t < 0.0) {
        return Err(PfError::InvalidParameter(
            "two-time correlation times must be >= 0".into(),
        ));
    }
    let x0 = rho_ss.left_mul(&b.mat);
    let (states, _) = integrate::evolve_impl(liouv, &x0, times, opts, false)?;
    Ok(states.iter().map(|x| x.expectation(&a.mat)).collect())
}

#[cfg(test)]
mod tests;
