use std::collections::BTreeMap;

use approx::assert_relative_eq;
use num_complex::Complex64;

use super::*;
use crate::bath::{Beta, LorentzianBathSpec, Sigma};
use crate::pf::{pf_mode_correlation, PseudoFermionBath, PseudoFermionMode};
use crate::sparse::CsMat;

fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

/// System placeholder with no modes of its own (bare-bath tests).
fn no_system() -> SystemSpec {
    SystemSpec {
        model: SystemModel::Explicit {
            n_modes: 0,
            hamiltonian: CsMat::zeros(1, 1),
            couplings: BTreeMap::new(),
        },
    }
}

fn bare_mode_bath(n: Complex64, omega: Complex64, damping: Complex64) -> PseudoFermionBath {
    let spec = LorentzianBathSpec::new(1.0, 1.0, 0.0, Beta::Finite(1.0)).unwrap();
    let mode = PseudoFermionMode {
        occupation: n,
        coupling: c(0.0, 0.0),
        coupling_sq: c(0.0, 0.0),
        frequency: omega,
        damping,
        lead: 0,
        spin: 0,
    };
    PseudoFermionBath {
        modes: vec![mode],
        source: spec,
        construction: crate::pf::BathConstruction::ResonantOnly,
        lead: 0,
        spin: 0,
    }
}

fn resonant_bath(spec: &LorentzianBathSpec) -> PseudoFermionBath {
    PseudoFermionBath::resonant_only(spec, 0, 0).unwrap()
}

#[test]
fn hamiltonian_hermitian_for_real_parameters() {
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.3, Beta::Finite(5.0)).unwrap();
    let system = SystemSpec::single_level(0.7);
    let baths = vec![resonant_bath(&spec)];
    let layout = layout_for(&system, &baths).unwrap();
    let h = build_hamiltonian(&system, &baths, &layout).unwrap();
    let diff = h.mat.add(&h.adjoint().mat.scaled(c(-1.0, 0.0))).unwrap();
    assert!(diff.max_abs() < 1e-14);
}

#[test]
fn hamiltonian_two_mode_hopping_spectrum() {
    // epsilon = Omega = 0, real lambda: single-particle sector eigenvalues
    // {+lambda, -lambda}; full spectrum {0, +-lambda, 0}
    let system = SystemSpec::single_level(0.0);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.0, Beta::Finite(5.0)).unwrap();
    let mut bath = resonant_bath(&spec);
    bath.modes[0].frequency = c(0.0, 0.0);
    let lambda = bath.modes[0].coupling.re;
    assert!(lambda > 0.0);
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let h = build_hamiltonian(&system, &[bath], &layout).unwrap();
    let dense = faer::Mat::<Complex64>::from_fn(4, 4, |i, j| h.mat.get(i, j));
    let mut eigs: Vec<f64> = dense.eigenvalues().unwrap().iter().map(|z| z.re).collect();
    eigs.sort_by(f64::total_cmp);
    assert_relative_eq!(eigs[0], -lambda, epsilon = 1e-12);
    assert_relative_eq!(eigs[1], 0.0, epsilon = 1e-12);
    assert_relative_eq!(eigs[2], 0.0, epsilon = 1e-12);
    assert_relative_eq!(eigs[3], lambda, epsilon = 1e-12);
}

#[test]
fn hamiltonian_imaginary_coupling_is_not_hermitian() {
    let system = SystemSpec::single_level(0.0);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.0, Beta::Finite(5.0)).unwrap();
    let mut bath = resonant_bath(&spec);
    bath.modes[0].coupling = c(0.0, 1.2);
    bath.modes[0].coupling_sq = c(-1.44, 0.0);
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let h = build_hamiltonian(&system, &[bath], &layout).unwrap();
    let diff = h.mat.add(&h.adjoint().mat.scaled(c(-1.0, 0.0))).unwrap();
    assert!(diff.max_abs() > 1.0);
}

#[test]
fn trace_functional_annihilates_generator() {
    // the trace row vec(I)^T L must vanish, including complex occupations
    let system = SystemSpec::single_level(0.4);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.2, Beta::Finite(5.0)).unwrap();
    let bath = PseudoFermionBath::exact_four(&spec, 1, 0, 0).unwrap();
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath], &layout).unwrap();
    let d = layout.dim();
    let mat = liouv.assemble().unwrap();
    let mut row_sums = vec![c(0.0, 0.0); d * d];
    for (r, col, v) in mat.triplets() {
        // accumulate w^T L where w has ones on diagonal positions
        if r % (d + 1) == 0 {
            row_sums[col] += v;
        }
    }
    let max = row_sums.iter().map(|v| v.norm()).fold(0.0, f64::max);
    assert!(max < 1e-12 * mat.norm_inf().max(1.0), "max = {max:e}");
}

#[test]
fn physical_mode_relaxes_to_occupation_at_rate_two_gamma() {
    let system = no_system();
    let n_target = 0.3;
    let gamma = 0.8;
    let bath = bare_mode_bath(c(n_target, 0.0), c(0.5, 0.0), c(gamma, 0.0));
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath.clone()], &layout).unwrap();
    // start from vacuum, not the bath's own equilibrium
    let empty = bare_mode_bath(c(0.0, 0.0), c(0.5, 0.0), c(gamma, 0.0));
    let rho0 = initial_state(&[c(1.0, 0.0)], &system, &[empty], &layout).unwrap();
    let times = crate::util::linear_grid(0.0, 4.0, 41);
    let (states, report) = evolve(&mut liouv, &rho0, &times, &EvolveOptions::default()).unwrap();
    assert!(report.max_trace_deviation.unwrap() < 1e-10);
    for (t, state) in times.iter().zip(&states) {
        let expected = n_target * (1.0 - (-2.0 * gamma * t).exp());
        let got = state.occupation(0);
        assert!(
            (got.re - expected).abs() < 1e-7 && got.im.abs() < 1e-10,
            "t={t}: {got} vs {expected}"
        );
    }
}

#[test]
fn zero_generator_keeps_state_constant() {
    let system = SystemSpec::single_level(0.0);
    let layout = layout_for(&system, &[]).unwrap();
    let mut liouv = build_liouvillian(&system, &[], &layout).unwrap();
    let rho0 = initial_state(
        &system_state_from_occupations(&[0.7]),
        &system,
        &[],
        &layout,
    )
    .unwrap();
    let times = [0.0, 1.0, 5.0];
    let (states, _) = evolve(&mut liouv, &rho0, &times, &EvolveOptions::default()).unwrap();
    for s in &states {
        assert!((s.occupation(0) - c(0.7, 0.0)).norm() < 1e-12);
    }
}

#[test]
fn initial_state_vacuum_and_occupations() {
    let system = SystemSpec::single_level(0.0);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.0, Beta::Finite(5.0)).unwrap();
    // all n_j = 0 gives rho_S (x) vacuum
    let mut bath = resonant_bath(&spec);
    bath.modes[0].occupation = c(0.0, 0.0);
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let rho = initial_state(
        &system_state_from_occupations(&[1.0]),
        &system,
        &[bath],
        &layout,
    )
    .unwrap();
    assert_eq!(rho.get(1, 1), c(1.0, 0.0)); // system occupied, env empty
    assert!((rho.trace() - c(1.0, 0.0)).norm() < 1e-15);

    // complex occupations still trace to exactly one, and <n_j>(0) = n_j
    let spec2 = LorentzianBathSpec::new(1.0, 2.5, 0.1, Beta::Finite(5.0)).unwrap();
    let bath2 = PseudoFermionBath::exact_two(&spec2, 1, crate::pf::DEFAULT_DELTA, 0, 0).unwrap();
    let layout2 = layout_for(&system, &[bath2.clone()]).unwrap();
    let rho2 = initial_state(
        &system_state_from_occupations(&[0.5]),
        &system,
        &[bath2.clone()],
        &layout2,
    )
    .unwrap();
    assert!((rho2.trace() - c(1.0, 0.0)).norm() < 1e-6);
    for (idx, mode) in pseudo_mode_table(&system, &[bath2]) {
        let got = rho2.occupation(idx);
        assert!(
            (got - mode.occupation).norm() < 1e-6 * (1.0 + mode.occupation.norm()),
            "mode {idx}: {got} vs {}",
            mode.occupation
        );
    }
}

#[test]
fn steady_state_of_physical_mode_is_thermal_diagonal() {
    let system = no_system();
    let n_target = 0.25;
    let bath = bare_mode_bath(c(n_target, 0.0), c(0.3, 0.0), c(1.1, 0.0));
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath], &layout).unwrap();
    let (rho, report) = steady_state(&mut liouv).unwrap();
    assert!(report.residual_inf <= report.residual_bound);
    assert!((rho.get(0, 0) - c(1.0 - n_target, 0.0)).norm() < 1e-12);
    assert!((rho.get(1, 1) - c(n_target, 0.0)).norm() < 1e-12);
    assert!(rho.get(0, 1).norm() < 1e-12);
}

#[test]
fn steady_state_matches_long_time_evolution() {
    let system = SystemSpec::single_level(0.5);
    let spec = LorentzianBathSpec::new(0.6, 2.0, 0.4, Beta::Finite(3.0)).unwrap();
    let bath = PseudoFermionBath::exact_four(&spec, 1, 0, 0).unwrap();
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath.clone()], &layout).unwrap();
    let (rho_ss, _) = steady_state(&mut liouv).unwrap();
    let rho0 = initial_state(
        &system_state_from_occupations(&[0.0]),
        &system,
        &[bath],
        &layout,
    )
    .unwrap();
    let times = [0.0, 50.0];
    let (states, _) = evolve(&mut liouv, &rho0, &times, &EvolveOptions::default()).unwrap();
    let evolved = states.last().unwrap();
    for mode in 0..layout.n_modes() {
        let a = evolved.occupation(mode);
        let b = rho_ss.occupation(mode);
        assert!((a - b).norm() < 1e-6, "mode {mode}: {a} vs {b}");
    }
}

#[test]
fn two_time_correlation_of_bare_mode_reproduces_free_correlation() {
    // Tr[c e^{Lt}(c^dag rho_ss)] = (1 - n) e^{(-i Omega - Gamma) t}, which is
    // the sigma = -1 free correlation divided by lambda^2; holds for complex
    // parameters as well.
    let cases = [
        (c(0.3, 0.0), c(0.7, 0.0), c(0.9, 0.0)),
        (c(0.2, 0.4), c(0.5, -0.3), c(1.1, 0.2)),
    ];
    for (n, omega, damping) in cases {
        let system = no_system();
        let bath = bare_mode_bath(n, omega, damping);
        let layout = layout_for(&system, &[bath.clone()]).unwrap();
        let mut liouv = build_liouvillian(&system, &[bath.clone()], &layout).unwrap();
        let (rho_ss, _) = steady_state(&mut liouv).unwrap();
        let a_op = crate::fock::annihilation(&layout, 0).unwrap();
        let b_op = crate::fock::creation(&layout, 0).unwrap();
        let times = crate::util::linear_grid(0.0, 3.0, 31);
        let vals = two_time_correlation(
            &mut liouv,
            &rho_ss,
            &a_op,
            &b_op,
            &times,
            &EvolveOptions::default(),
        )
        .unwrap();
        for (t, v) in times.iter().zip(&vals) {
            let expected =
                (c(1.0, 0.0) - n) * ((-Complex64::i() * omega - damping) * t).exp();
            assert!(
                (v - expected).norm() < 1e-8,
                "n={n} t={t}: {v} vs {expected}"
            );
        }
        // and it agrees with the analytic mode correlation formula with the
        // coupling restored
        let mut mode = bath.modes[0];
        mode.coupling_sq = c(1.0, 0.0);
        for (t, v) in times.iter().zip(&vals) {
            let free = pf_mode_correlation(&mode, Sigma::Minus, *t);
            assert!((v - free).norm() < 1e-8);
        }
    }
}

#[test]
fn two_time_correlation_rejects_even_operators() {
    let system = no_system();
    let bath = bare_mode_bath(c(0.4, 0.0), c(0.0, 0.0), c(1.0, 0.0));
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath], &layout).unwrap();
    let (rho_ss, _) = steady_state(&mut liouv).unwrap();
    let odd = crate::fock::annihilation(&layout, 0).unwrap();
    let even = crate::fock::number(&layout, 0).unwrap();
    let r = two_time_correlation(
        &mut liouv,
        &rho_ss,
        &even,
        &odd,
        &[0.0, 1.0],
        &EvolveOptions::default(),
    );
    assert!(matches!(r, Err(PfError::ParityViolation(_))));
}

#[test]
fn trace_preserved_with_complex_parameter_bath() {
    let system = SystemSpec::single_level(1.0);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.0, Beta::Finite(5.0)).unwrap();
    let bath = PseudoFermionBath::exact_four(&spec, 1, 0, 0).unwrap();
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath.clone()], &layout).unwrap();
    let rho0 = initial_state(
        &system_state_from_occupations(&[1.0]),
        &system,
        &[bath],
        &layout,
    )
    .unwrap();
    let times = crate::util::linear_grid(0.0, 5.0, 11);
    let (states, report) = evolve(&mut liouv, &rho0, &times, &EvolveOptions::default()).unwrap();
    assert!(report.max_trace_deviation.unwrap() < 1e-8);
    // physical-parameter reduction: reduced system density stays Hermitian
    // within the map's truncation error scale
    for s in &states {
        let reduced = s.reduced_system(1);
        assert!((reduced[1]).norm() < 1e-9);
        assert!((reduced[2]).norm() < 1e-9);
    }
}

#[test]
fn trbdf2_agrees_with_adaptive_rk() {
    let system = SystemSpec::single_level(0.3);
    let spec = LorentzianBathSpec::new(0.8, 2.0, 0.1, Beta::Finite(4.0)).unwrap();
    let bath = PseudoFermionBath::exact_four(&spec, 1, 0, 0).unwrap();
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath.clone()], &layout).unwrap();
    let rho0 = initial_state(
        &system_state_from_occupations(&[1.0]),
        &system,
        &[bath],
        &layout,
    )
    .unwrap();
    let times = crate::util::linear_grid(0.0, 2.0, 5);
    let (rk, _) = evolve(
        &mut liouv,
        &rho0,
        &times,
        &EvolveOptions {
            method: IntegratorKind::AdaptiveRk,
            ..Default::default()
        },
    )
    .unwrap();
    let (ir, _) = evolve(
        &mut liouv,
        &rho0,
        &times,
        &EvolveOptions {
            method: IntegratorKind::TrBdf2,
            dt: Some(0.002),
            ..Default::default()
        },
    )
    .unwrap();
    for (a, b) in rk.iter().zip(&ir) {
        let diff = a
            .data
            .iter()
            .zip(&b.data)
            .map(|(x, y)| (x - y).norm())
            .fold(0.0, f64::max);
        assert!(diff < 1e-6, "diff = {diff:e}");
    }
}

#[test]
fn stiff_regulated_bath_evolves_under_implicit_integrator() {
    // moderate regulator: TR-BDF2 handles the stiffness and the trace stays
    // clean; the regulated state carries entries ~ Delta^2 that cancel to
    // trace one, so the roundoff floor grows with Delta
    let system = SystemSpec::single_level(0.5);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.0, Beta::Finite(5.0)).unwrap();
    let run = |delta: f64| {
        let bath = PseudoFermionBath::exact_two(&spec, 1, c(delta, 0.0), 0, 0).unwrap();
        let layout = layout_for(&system, &[bath.clone()]).unwrap();
        let mut liouv = build_liouvillian(&system, &[bath.clone()], &layout).unwrap();
        let rho0 = initial_state(
            &system_state_from_occupations(&[0.0]),
            &system,
            &[bath],
            &layout,
        )
        .unwrap();
        let times = crate::util::linear_grid(0.0, 1.0, 6);
        let opts = EvolveOptions {
            method: IntegratorKind::TrBdf2,
            dt: Some(5e-4),
            ..Default::default()
        };
        let (states, report) = evolve(&mut liouv, &rho0, &times, &opts).unwrap();
        (
            report.max_trace_deviation.unwrap(),
            states.last().unwrap().occupation(0),
        )
    };
    let (dev_small, occ) = run(1e3);
    assert!(dev_small < 5e-6, "dev = {dev_small:e}");
    assert!(occ.re > -0.1 && occ.re < 1.1);
    // the conditioning loss at huge regulators is real and must be visible
    // in the diagnostic, not hidden
    let (dev_large, _) = run(1e6);
    assert!(dev_large > 1e-3, "dev = {dev_large:e}");
}

#[test]
fn auto_method_picks_implicit_for_stiff_generators() {
    let system = SystemSpec::single_level(0.5);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.0, Beta::Finite(5.0)).unwrap();
    let bath = PseudoFermionBath::exact_two(&spec, 1, c(1e5, 0.0), 0, 0).unwrap();
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath.clone()], &layout).unwrap();
    let rho0 = initial_state(
        &system_state_from_occupations(&[0.0]),
        &system,
        &[bath],
        &layout,
    )
    .unwrap();
    let (_, report) = evolve(
        &mut liouv,
        &rho0,
        &[0.0, 5.0, 10.0],
        &EvolveOptions::default(),
    )
    .unwrap();
    assert_eq!(report.method, "tr-bdf2");
    // the conditioning loss at this regulator scale is reported, not hidden:
    // state entries ~ Delta^2 cancel to trace one and the solve amplifies
    // roundoff accordingly
    let dev = report.max_trace_deviation.unwrap();
    assert!(dev.is_finite());
}

#[test]
fn assembled_and_term_wise_application_agree() {
    let system = SystemSpec::single_level(0.4);
    let spec = LorentzianBathSpec::new(1.0, 2.5, 0.3, Beta::Finite(5.0)).unwrap();
    let bath = PseudoFermionBath::exact_four(&spec, 1, 0, 0).unwrap();
    let layout = layout_for(&system, &[bath.clone()]).unwrap();
    let mut liouv = build_liouvillian(&system, &[bath], &layout).unwrap();
    let n = liouv.superop_dim();
    let mut rng = crate::util::SplitMix64::new(3);
    let x: Vec<Complex64> = (0..n)
        .map(|_| c(rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)))
        .collect();
    let mut y_terms = vec![c(0.0, 0.0); n];
    liouv.apply(&x, &mut y_terms);
    liouv.assemble().unwrap();
    let mut y_mat = vec![c(0.0, 0.0); n];
    liouv.apply(&x, &mut y_mat);
    let diff = y_terms
        .iter()
        .zip(&y_mat)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    assert!(diff < 1e-9 * liouv.norm_inf(), "diff = {diff:e}");
}

#[test]
fn evolve_rejects_bad_time_grids() {
    let system = SystemSpec::single_level(0.0);
    let layout = layout_for(&system, &[]).unwrap();
    let mut liouv = build_liouvillian(&system, &[], &layout).unwrap();
    let rho0 = initial_state(
        &system_state_from_occupations(&[0.0]),
        &system,
        &[],
        &layout,
    )
    .unwrap();
    assert!(evolve(&mut liouv, &rho0, &[1.0, 0.5], &EvolveOptions::default()).is_err());
    assert!(evolve(&mut liouv, &rho0, &[-1.0, 0.5], &EvolveOptions::default()).is_err());
}

#[test]
fn degenerate_null_space_is_detected() {
    // a closed level with no dissipation has a two-dimensional null space
    // (both population states are stationary): the solver must refuse
    let system = SystemSpec::single_level(0.7);
    let layout = layout_for(&system, &[]).unwrap();
    let mut liouv = build_liouvillian(&system, &[], &layout).unwrap();
    let r = steady_state(&mut liouv);
    assert!(
        matches!(r, Err(PfError::DegenerateNullSpace(_)) | Err(PfError::NoConvergence(_))),
        "{r:?}"
    );
}
