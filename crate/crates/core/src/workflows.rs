//! Command orchestration: resolve a configuration into baths and generators,
//! run the requested computation, and emit CSV tables plus a JSON manifest
//! echoing every number that entered the run.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64;
use rayon::prelude::*;
use serde_json::json;

use crate::bath::fit::{fit_matsubara_envelope, FitOptions, FitReport, FitTerm};
use crate::bath::quad::correlation_quadrature;
use crate::bath::{
    correlation_decomposed, matsubara_zero_t, resonant_correlation, Beta, LorentzianBathSpec,
    Sigma,
};
use crate::config::{MapKind, RunConfig};
use crate::engine::{
    build_liouvillian, evolve, initial_state, layout_for_with_cap, steady_state_with,
    system_state_from_occupations, EvolveOptions, IntegratorKind, Liouvillian, SteadyOptions,
    SystemSpec,
};
use crate::error::{PfError, Result};
use crate::observables::{lead_current, spectral_function, SpectrumOptions};
use crate::output::{correlation_csv, out_path, write_json, CsvWriter};
use crate::pf::{pf_bath_correlation, validate_bath, PseudoFermionBath};
use crate::util::{geometric_grid, linear_grid};

/// Outcome of one command: manifest value plus the files written.
#[derive(Debug, Clone)]
pub struct CommandOutcome {
    pub manifest: serde_json::Value,
    pub files: Vec<PathBuf>,
}

fn evolve_options(config: &RunConfig) -> Result<EvolveOptions> {
    let method = match config.solver.method.as_str() {
        "auto" => IntegratorKind::Auto,
        "rk" => IntegratorKind::AdaptiveRk,
        "trbdf2" => IntegratorKind::TrBdf2,
        other => {
            return Err(PfError::Config(format!(
                "unknown solver.method {other:?} (expected \"auto\", \"rk\" or \"trbdf2\")"
            )))
        }
    };
    Ok(EvolveOptions {
        rtol: config.solver.rtol,
        atol: config.solver.atol,
        method,
        dt: config.solver.dt,
        assemble_cap: config.solver.assemble_cap,
        ..Default::default()
    })
}

fn channel_spec(bath: &crate::config::BathConfig) -> Result<LorentzianBathSpec> {
    LorentzianBathSpec::new(bath.coupling, bath.width, bath.mu, bath.beta)
}

fn fit_grid(construction: &crate::config::ConstructionConfig) -> Result<Vec<f64>> {
    match construction.fit_grid.as_str() {
        "uniform" => Ok(linear_grid(
            construction.fit_t_min,
            construction.fit_t_max,
            construction.fit_points,
        )),
        "geometric" => Ok(geometric_grid(
            construction.fit_t_min,
            construction.fit_t_max,
            construction.fit_points,
        )),
        other => Err(PfError::Config(format!(
            "unknown construction.fit_grid {other:?} (expected \"uniform\" or \"geometric\")"
        ))),
    }
}

/// Envelope fits keyed by the parameters the envelope depends on (it is
/// independent of mu and sigma).
type FitKey = (u64, u64, u64);

fn fit_key(spec: &LorentzianBathSpec) -> Result<FitKey> {
    let beta = spec.beta.finite()?;
    Ok((
        spec.coupling.to_bits(),
        spec.width.to_bits(),
        beta.to_bits(),
    ))
}

pub struct BathSetup {
    pub baths: Vec<PseudoFermionBath>,
    pub fits: BTreeMap<FitKey, (Vec<FitTerm>, FitReport)>,
}

/// Construct one pseudo-fermion bath per configured channel.
pub fn build_baths(config: &RunConfig) -> Result<BathSetup> {
    build_baths_with(config, |_, spec| Ok(*spec))
}

/// Same, with a hook rewriting each channel's physical spec first (sweeps).
pub fn build_baths_with(
    config: &RunConfig,
    rewrite: impl Fn((usize, usize), &LorentzianBathSpec) -> Result<LorentzianBathSpec>,
) -> Result<BathSetup> {
    let construction = &config.construction;
    let mut fits: BTreeMap<FitKey, (Vec<FitTerm>, FitReport)> = BTreeMap::new();
    let mut baths = Vec::new();
    for (channel, bath_cfg) in config.resolve_channels()? {
        let spec = rewrite(channel, &channel_spec(bath_cfg)?)?;
        let (lead, spin) = channel;
        let bath = match construction.map {
            MapKind::Resonant => PseudoFermionBath::resonant_only(&spec, lead, spin)?,
            MapKind::Exact2 => PseudoFermionBath::exact_two(
                &spec,
                construction.k,
                config.delta(),
                lead,
                spin,
            )?,
            MapKind::Exact4 => {
                PseudoFermionBath::exact_four(&spec, construction.k, lead, spin)?
            }
            MapKind::Fitted => {
                let key = fit_key(&spec)?;
                if !fits.contains_key(&key) {
                    let grid = fit_grid(construction)?;
                    let opts = FitOptions {
                        n_terms: construction.k_fit,
                        restarts: construction.restarts,
                        seed: construction.seed,
                        max_iterations: 400,
                    };
                    let fitted = fit_matsubara_envelope(&spec, &grid, &opts)?;
                    fits.insert(key, fitted);
                }
                let terms = &fits[&key].0;
                PseudoFermionBath::fitted(&spec, terms, config.delta(), lead, spin)?
            }
        };
        baths.push(bath);
    }
    Ok(BathSetup { baths, fits })
}

fn base_manifest(config: &RunConfig, command: &str) -> serde_json::Value {
    json!({
        "command": command,
        "gamma_ref": config.gamma_ref(),
        "config": serde_json::to_value(config).expect("config serializes"),
    })
}

fn setup_manifest(setup: &BathSetup) -> serde_json::Value {
    json!({
        "mode_counts": setup.baths.iter().map(|b| b.n_modes()).collect::<Vec<_>>(),
        "baths": setup
            .baths
            .iter()
            .map(|b| serde_json::to_value(b).expect("bath serializes"))
            .collect::<Vec<_>>(),
        "fit_reports": setup
            .fits
            .values()
            .map(|(_, report)| serde_json::to_value(report).expect("report serializes"))
            .collect::<Vec<_>>(),
    })
}

/// Exact reference correlation: quadrature at finite temperature, resonant
/// plus Matsubara integral at zero temperature.
fn reference_correlation(sigma: Sigma, t: f64, spec: &LorentzianBathSpec) -> Result<Complex64> {
    match spec.beta {
        Beta::Finite(_) => correlation_quadrature(sigma, t, spec),
        Beta::Infinite => {
            let mut v = resonant_correlation(sigma, t, spec);
            if t != 0.0 {
                v += matsubara_zero_t(sigma, t, spec)?;
            }
            Ok(v)
        }
    }
}

/// Correlation tables: exact reference, truncated decomposition, resonant
/// part, Matsubara part, and the constructed bath's summed mode correlation,
/// one file per ordering, plus a deviation report.
pub fn cmd_decompose(config: &RunConfig) -> Result<CommandOutcome> {
    let corr = config.correlation.clone().unwrap_or_default();
    let grid = linear_grid(corr.t_min, corr.t_max, corr.points);
    let setup = build_baths(config)?;
    let channels = config.resolve_channels()?;
    let spec = channel_spec(channels[0].1)?;
    let bath = &setup.baths[0];
    let gamma_ref = config.gamma_ref();
    let dir = &config.output.dir;
    let prefix = &config.output.prefix;

    let mut files = Vec::new();
    let mut deviations = serde_json::Map::new();
    for sigma in Sigma::BOTH {
        let tag = match sigma {
            Sigma::Plus => "sigma+",
            Sigma::Minus => "sigma-",
        };
        let reference: Vec<Complex64> = grid
            .par_iter()
            .map(|&t| reference_correlation(sigma, t, &spec))
            .collect::<Result<_>>()?;
        let decomposed: Vec<Complex64> = if spec.beta.is_finite() {
            grid.iter()
                .map(|&t| correlation_decomposed(sigma, t, &spec, corr.k_table))
                .collect::<Result<_>>()?
        } else {
            reference.clone()
        };
        let resonant: Vec<Complex64> = grid
            .iter()
            .map(|&t| resonant_correlation(sigma, t, &spec))
            .collect();
        let matsubara: Vec<Complex64> = decomposed
            .iter()
            .zip(&resonant)
            .map(|(d, r)| d - r)
            .collect();
        let pf: Vec<Complex64> = grid
            .iter()
            .map(|&t| pf_bath_correlation(&bath.modes, sigma, t))
            .collect();

        for (name, values) in [
            ("reference", &reference),
            ("decomposed", &decomposed),
            ("resonant", &resonant),
            ("matsubara", &matsubara),
            ("pf", &pf),
        ] {
            let path = out_path(dir, prefix, &format!("{name}_{tag}.csv"));
            correlation_csv(gamma_ref, &grid, values, &path)?;
            files.push(path);
        }
        let sup = |a: &[Complex64], b: &[Complex64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).norm())
                .fold(0.0f64, f64::max)
        };
        deviations.insert(
            tag.into(),
            json!({
                "decomposed_vs_reference_sup": sup(&decomposed, &reference),
                "pf_vs_reference_sup": sup(&pf, &reference),
                "pf_vs_decomposed_sup": sup(&pf, &decomposed),
            }),
        );
    }

    let mut manifest = base_manifest(config, "decompose");
    manifest["setup"] = setup_manifest(&setup);
    manifest["grid"] = json!({"t_min": corr.t_min, "t_max": corr.t_max, "points": corr.points, "k_table": corr.k_table});
    manifest["deviations"] = serde_json::Value::Object(deviations);
    let manifest_path = out_path(dir, prefix, "manifest.json");
    write_json(&manifest, &manifest_path)?;
    files.push(manifest_path);
    Ok(CommandOutcome { manifest, files })
}

/// Envelope fit: report with residual_l2 / residual_sup / terms[], plus a
/// target-vs-fit table on the fit grid.
pub fn cmd_fit(config: &RunConfig) -> Result<CommandOutcome> {
    let construction = &config.construction;
    let channels = config.resolve_channels()?;
    let spec = channel_spec(channels[0].1)?;
    let grid = fit_grid(construction)?;
    let opts = FitOptions {
        n_terms: construction.k_fit,
        restarts: construction.restarts,
        seed: construction.seed,
        max_iterations: 400,
    };
    let (terms, report) = fit_matsubara_envelope(&spec, &grid, &opts)?;

    let neutral = spec.with_mu(0.0);
    let mut w = CsvWriter::new(
        config.gamma_ref(),
        &["t", "target_re", "target_im", "fit_re", "fit_im"],
    );
    for &t in &grid {
        let target = crate::bath::matsubara_sum_compensated(Sigma::Plus, t, &neutral, 1e-12)?;
        let fit: Complex64 = terms.iter().map(|f| f.envelope(t)).sum();
        w.row(&[t, target.re, target.im, fit.re, fit.im]);
    }
    let dir = &config.output.dir;
    let prefix = &config.output.prefix;
    let envelope_path = out_path(dir, prefix, "fit_envelope.csv");
    w.write(&envelope_path)?;

    let mut manifest = base_manifest(config, "fit");
    manifest["fit"] = json!({
        "residual_l2": report.residual_l2,
        "residual_sup": report.residual_sup,
        "target_peak": report.target_peak,
        "converged": report.converged,
        "best_restart": report.best_restart,
        "terms": report
            .terms
            .iter()
            .map(|f| json!({
                "amplitude": [f.amplitude.re, f.amplitude.im],
                "rate_like": f.rate_like,
                "width_like": f.width_like,
            }))
            .collect::<Vec<_>>(),
    });
    let report_path = out_path(dir, prefix, "fit_report.json");
    write_json(&manifest, &report_path)?;
    Ok(CommandOutcome {
        manifest,
        files: vec![envelope_path, report_path],
    })
}

/// Compare each constructed bath against the exact correlation.
pub fn cmd_validate(config: &RunConfig) -> Result<CommandOutcome> {
    let corr = config.correlation.clone().unwrap_or_default();
    let grid = linear_grid(corr.t_min.max(0.0), corr.t_max, corr.points);
    let setup = build_baths(config)?;
    let channels = config.resolve_channels()?;

    let mut reports = Vec::new();
    let mut all_pass = true;
    for (bath, (channel, cfg)) in setup.baths.iter().zip(&channels) {
        let spec = channel_spec(cfg)?;
        let report = validate_bath(bath, &spec, &grid, &Sigma::BOTH, corr.tolerance)?;
        all_pass &= report.pass;
        reports.push(json!({
            "lead": channel.0,
            "spin": channel.1,
            "report": serde_json::to_value(&report).expect("report serializes"),
        }));
    }
    let mut manifest = base_manifest(config, "validate");
    manifest["setup"] = setup_manifest(&setup);
    manifest["tolerance"] = json!(corr.tolerance);
    manifest["pass"] = json!(all_pass);
    manifest["channels"] = json!(reports);
    let dir = &config.output.dir;
    let prefix = &config.output.prefix;
    let path = out_path(dir, prefix, "validate_report.json");
    write_json(&manifest, &path)?;
    Ok(CommandOutcome {
        manifest,
        files: vec![path],
    })
}

fn build_engine(
    config: &RunConfig,
    system: &SystemSpec,
    baths: &[PseudoFermionBath],
) -> Result<Liouvillian> {
    let layout = layout_for_with_cap(system, baths, config.solver.mode_cap)?;
    build_liouvillian(system, baths, &layout)
}

/// Time evolution of the augmented state from a product initial condition;
/// emits `t, <system occupations>, trace_dev`.
pub fn cmd_evolve(config: &RunConfig) -> Result<CommandOutcome> {
    let evolve_cfg = config.evolve.clone().ok_or_else(|| {
        PfError::Config("evolve command requires an [evolve] block".into())
    })?;
    let system = config.system_spec()?;
    if evolve_cfg.initial.len() != system.n_modes() {
        return Err(PfError::Config(format!(
            "evolve.initial needs {} occupations, got {}",
            system.n_modes(),
            evolve_cfg.initial.len()
        )));
    }
    let setup = build_baths(config)?;
    let mut liouv = build_engine(config, &system, &setup.baths)?;
    let rho0 = initial_state(
        &system_state_from_occupations(&evolve_cfg.initial),
        &system,
        &setup.baths,
        &liouv.layout.clone(),
    )?;
    let times = linear_grid(0.0, evolve_cfg.t_end, evolve_cfg.points);
    let opts = evolve_options(config)?;
    let (states, report) = evolve(&mut liouv, &rho0, &times, &opts)?;

    let n_sys = system.n_modes();
    let mut columns: Vec<String> = vec!["t".into()];
    for i in 0..n_sys {
        columns.push(format!("n_sys{i}_re"));
        columns.push(format!("n_sys{i}_im"));
    }
    columns.push("trace_dev".into());
    let column_refs: Vec<&str> = columns.iter().map(|s| s.as_str()).collect();
    let mut w = CsvWriter::new(config.gamma_ref(), &column_refs);
    for (&t, state) in times.iter().zip(&states) {
        let mut row = vec![t];
        for i in 0..n_sys {
            let occ = state.occupation(i);
            row.push(occ.re);
            row.push(occ.im);
        }
        row.push((state.trace() - Complex64::new(1.0, 0.0)).norm());
        w.row(&row);
    }
    let dir = &config.output.dir;
    let prefix = &config.output.prefix;
    let traj_path = out_path(dir, prefix, "trajectory.csv");
    w.write(&traj_path)?;

    let mut manifest = base_manifest(config, "evolve");
    manifest["setup"] = setup_manifest(&setup);
    manifest["evolve_report"] = serde_json::to_value(&report).expect("report");
    let manifest_path = out_path(dir, prefix, "manifest.json");
    write_json(&manifest, &manifest_path)?;
    Ok(CommandOutcome {
        manifest,
        files: vec![traj_path, manifest_path],
    })
}

fn steady_options(config: &RunConfig) -> SteadyOptions {
    SteadyOptions {
        assemble_cap: config.solver.assemble_cap,
        ..Default::default()
    }
}

/// Steady state: occupations per mode, currents per lead, solver report.
pub fn cmd_steady(config: &RunConfig) -> Result<CommandOutcome> {
    let system = config.system_spec()?;
    let setup = build_baths(config)?;
    let mut liouv = build_engine(config, &system, &setup.baths)?;
    let layout = liouv.layout.clone();
    let (rho, report) = steady_state_with(&mut liouv, &steady_options(config))?;

    let lead_names = config.lead_names();
    let mut currents = Vec::new();
    for lead in 0..lead_names.len() {
        let sample = lead_current(&rho, &system, &setup.baths, &layout, lead)?;
        currents.push(json!({
            "lead": lead_names[lead],
            "value": sample.value,
            "imaginary_part": sample.imaginary_part,
        }));
    }
    let occupations: Vec<serde_json::Value> = layout
        .labels()
        .iter()
        .enumerate()
        .map(|(i, label)| {
            let occ = rho.occupation(i);
            json!({"mode": label.to_string(), "occupation": [occ.re, occ.im]})
        })
        .collect();

    let mut manifest = base_manifest(config, "steady");
    manifest["setup"] = setup_manifest(&setup);
    manifest["steady_report"] = serde_json::to_value(&report).expect("report");
    manifest["currents"] = json!(currents);
    manifest["occupations"] = json!(occupations);
    manifest["hermiticity_deviation"] = json!(rho.hermiticity_deviation());
    let dir = &config.output.dir;
    let prefix = &config.output.prefix;
    let path = out_path(dir, prefix, "steady.json");
    write_json(&manifest, &path)?;
    Ok(CommandOutcome {
        manifest,
        files: vec![path],
    })
}

/// Steady current vs chemical potential difference: `dmu, I_L, I_R`.
/// The two leads' potentials are split symmetrically about their configured
/// midpoint; points run in parallel.
pub fn cmd_sweep_current(config: &RunConfig) -> Result<CommandOutcome> {
    let sweep = config.sweep.clone().ok_or_else(|| {
        PfError::Config("sweep-current command requires a [sweep] block".into())
    })?;
    let lead_names = config.lead_names();
    if lead_names.len() != 2 {
        return Err(PfError::Config(format!(
            "sweep-current needs exactly two leads, got {}",
            lead_names.len()
        )));
    }
    let system = config.system_spec()?;
    let channels = config.resolve_channels()?;
    let mid = channels
        .iter()
        .map(|(_, b)| b.mu)
        .sum::<f64>()
        / channels.len() as f64;

    let dmu_grid = linear_grid(sweep.dmu_min, sweep.dmu_max, sweep.points);
    let results: Vec<(f64, f64, f64, f64)> = dmu_grid
        .par_iter()
        .map(|&dmu| -> Result<(f64, f64, f64, f64)> {
            let setup = build_baths_with(config, |(lead, _), spec| {
                let offset = if lead == 0 { 0.5 * dmu } else { -0.5 * dmu };
                Ok(spec.with_mu(mid + offset))
            })?;
            let mut liouv = build_engine(config, &system, &setup.baths)?;
            let layout = liouv.layout.clone();
            let (rho, _) = steady_state_with(&mut liouv, &steady_options(config))?;
            let il = lead_current(&rho, &system, &setup.baths, &layout, 0)?;
            let ir = lead_current(&rho, &system, &setup.baths, &layout, 1)?;
            Ok((dmu, il.value, ir.value, il.imaginary_part.abs().max(ir.imaginary_part.abs())))
        })
        .collect::<Result<_>>()?;

    let mut w = CsvWriter::new(config.gamma_ref(), &["dmu", "I_L", "I_R"]);
    for &(dmu, il, ir, _) in &results {
        w.row(&[dmu, il, ir]);
    }
    let dir = &config.output.dir;
    let prefix = &config.output.prefix;
    let sweep_path = out_path(dir, prefix, "sweep.csv");
    w.write(&sweep_path)?;

    // fit metadata from one representative point
    let setup = build_baths(config)?;
    let mut manifest = base_manifest(config, "sweep-current");
    manifest["setup"] = setup_manifest(&setup);
    manifest["sweep"] = json!({
        "dmu_min": sweep.dmu_min,
        "dmu_max": sweep.dmu_max,
        "points": sweep.points,
        "mu_midpoint": mid,
        "max_imaginary_residual": results.iter().map(|r| r.3).fold(0.0f64, f64::max),
    });
    let manifest_path = out_path(dir, prefix, "manifest.json");
    write_json(&manifest, &manifest_path)?;
    Ok(CommandOutcome {
        manifest,
        files: vec![sweep_path, manifest_path],
    })
}

/// Impurity spectral function `omega, A` plus the time-domain correlation
/// intermediates.
pub fn cmd_spectrum(config: &RunConfig) -> Result<CommandOutcome> {
    let spectrum_cfg = config.spectrum.clone().unwrap_or_default();
    let spin = match spectrum_cfg.spin.as_deref() {
        None | Some("up") => 0,
        Some("down") => 1,
        Some(other) => {
            return Err(PfError::Config(format!(
                "unknown spectrum.spin {other:?}"
            )))
        }
    };
    let system = config.system_spec()?;
    let setup = build_baths(config)?;
    let mut liouv = build_engine(config, &system, &setup.baths)?;
    let (rho, steady_report) = steady_state_with(&mut liouv, &steady_options(config))?;

    let omega = linear_grid(
        spectrum_cfg.omega_min,
        spectrum_cfg.omega_max,
        spectrum_cfg.points,
    );
    let spec_opts = SpectrumOptions {
        t_max: spectrum_cfg.t_max,
        dt: spectrum_cfg.dt,
        eta: spectrum_cfg.eta,
        decay_threshold: spectrum_cfg.decay_threshold,
    };
    let evolve_opts = evolve_options(config)?;
    let (table, pair) =
        spectral_function(&mut liouv, &rho, &system, spin, &omega, &spec_opts, &evolve_opts)?;

    let dir = &config.output.dir;
    let prefix = &config.output.prefix;
    let mut w = CsvWriter::new(config.gamma_ref(), &["omega", "A"]);
    for (&om, &a) in table.omega.iter().zip(&table.values) {
        w.row(&[om, a]);
    }
    let spectrum_path = out_path(dir, prefix, "spectrum.csv");
    w.write(&spectrum_path)?;

    let mut wc = CsvWriter::new(
        config.gamma_ref(),
        &["t", "c1_re", "c1_im", "c2_re", "c2_im", "neg_re", "neg_im"],
    );
    for (((&t, c1), c2), neg) in pair
        .times
        .iter()
        .zip(&pair.c1)
        .zip(&pair.c2)
        .zip(&pair.negative)
    {
        wc.row(&[t, c1.re, c1.im, c2.re, c2.im, neg.re, neg.im]);
    }
    let corr_path = out_path(dir, prefix, "correlation.csv");
    wc.write(&corr_path)?;

    let mut manifest = base_manifest(config, "spectrum");
    manifest["setup"] = setup_manifest(&setup);
    manifest["steady_report"] = serde_json::to_value(&steady_report).expect("report");
    manifest["spectrum"] = json!({
        "spin": table.spin,
        "eta": table.eta,
        "t_max": spec_opts.t_max,
        "dt": spec_opts.dt,
        "sum_rule": table.sum_rule(),
        "imaginary_residual": table.imaginary_residual,
    });
    let manifest_path = out_path(dir, prefix, "manifest.json");
    write_json(&manifest, &manifest_path)?;
    Ok(CommandOutcome {
        manifest,
        files: vec![spectrum_path, corr_path, manifest_path],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::RunConfig;

    fn tmpdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!("pfsim-wf-{tag}-{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn two_lead_config(tag: &str, extra: &str) -> RunConfig {
        let dir = tmpdir(tag);
        let text = format!(
            r#"
[system]
model = "single-level"
epsilon = 1.0

[[bath]]
lead = "L"
coupling = 1.0
width = 2.5
mu = 0.0
beta = 5.0

[[bath]]
lead = "R"
coupling = 1.0
width = 2.5
mu = 0.0
beta = 5.0

[construction]
map = "resonant"

[output]
dir = "{}"
prefix = "t"
{extra}
"#,
            dir.display()
        );
        RunConfig::from_toml_str(&text).unwrap()
    }

    #[test]
    fn decompose_emits_tables_and_deviations() {
        let mut config = two_lead_config("dec", "");
        config.correlation = Some(crate::config::CorrelationConfig {
            t_min: 0.0,
            t_max: 5.0,
            points: 21,
            k_table: 40,
            tolerance: 1e-2,
        });
        let outcome = cmd_decompose(&config).unwrap();
        assert_eq!(outcome.files.len(), 11);
        for f in &outcome.files {
            assert!(f.exists(), "{f:?}");
        }
        // resonant-only bath: pf vs decomposed deviation equals the
        // Matsubara part it drops
        let dev = outcome.manifest["deviations"]["sigma+"]["pf_vs_decomposed_sup"]
            .as_f64()
            .unwrap();
        assert!(dev > 0.05);
        // K = 0 config: decomposition collapses onto the resonant table
        let mut c0 = two_lead_config("dec0", "");
        c0.correlation = Some(crate::config::CorrelationConfig {
            t_min: 0.0,
            t_max: 5.0,
            points: 11,
            k_table: 0,
            tolerance: 1e-2,
        });
        let o0 = cmd_decompose(&c0).unwrap();
        let dev0 = o0.manifest["deviations"]["sigma+"]["pf_vs_decomposed_sup"]
            .as_f64()
            .unwrap();
        assert!(dev0 < 1e-14);
    }

    #[test]
    fn steady_reports_zero_current_for_symmetric_leads() {
        let config = two_lead_config("steady", "");
        let outcome = cmd_steady(&config).unwrap();
        let currents = outcome.manifest["currents"].as_array().unwrap();
        for c in currents {
            assert!(c["value"].as_f64().unwrap().abs() < 1e-8);
        }
    }

    #[test]
    fn sweep_contains_symmetric_zero_and_is_reproducible() {
        let mut config = two_lead_config("sweep", "");
        config.sweep = Some(crate::config::SweepConfig {
            dmu_min: -2.0,
            dmu_max: 2.0,
            points: 5,
        });
        let first = cmd_sweep_current(&config).unwrap();
        let sweep_file = &first.files[0];
        let text1 = std::fs::read_to_string(sweep_file).unwrap();
        // dmu = 0 row carries a zero current
        let zero_row: Vec<&str> = text1
            .lines()
            .find(|l| l.starts_with("0.0000000000000000e0"))
            .unwrap()
            .split(',')
            .collect();
        assert!(zero_row[1].parse::<f64>().unwrap().abs() < 1e-8);
        // byte-identical on rerun
        let second = cmd_sweep_current(&config).unwrap();
        let text2 = std::fs::read_to_string(&second.files[0]).unwrap();
        assert_eq!(text1, text2);
    }

    #[test]
    fn sweep_single_point_matches_direct_composition() {
        let mut config = two_lead_config("sweep1", "");
        config.sweep = Some(crate::config::SweepConfig {
            dmu_min: 1.5,
            dmu_max: 1.5001,
            points: 2,
        });
        let outcome = cmd_sweep_current(&config).unwrap();
        let text = std::fs::read_to_string(&outcome.files[0]).unwrap();
        let first_row: Vec<f64> = text
            .lines()
            .nth(2)
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        // direct composition at the same point
        let system = config.system_spec().unwrap();
        let setup = build_baths_with(&config, |(lead, _), spec| {
            let offset = if lead == 0 { 0.75 } else { -0.75 };
            Ok(spec.with_mu(offset))
        })
        .unwrap();
        let mut liouv = build_engine(&config, &system, &setup.baths).unwrap();
        let layout = liouv.layout.clone();
        let (rho, _) = steady_state_with(&mut liouv, &SteadyOptions::default()).unwrap();
        let ir = lead_current(&rho, &system, &setup.baths, &layout, 1).unwrap();
        assert!((first_row[2] - ir.value).abs() < 1e-12);
    }

    #[test]
    fn evolve_emits_trajectory() {
        let mut config = two_lead_config("evolve", "");
        config.evolve = Some(crate::config::EvolveConfig {
            t_end: 2.0,
            points: 9,
            initial: vec![1.0],
        });
        let outcome = cmd_evolve(&config).unwrap();
        let text = std::fs::read_to_string(&outcome.files[0]).unwrap();
        assert_eq!(text.lines().count(), 2 + 9);
        let last: Vec<f64> = text
            .lines()
            .last()
            .unwrap()
            .split(',')
            .map(|v| v.parse().unwrap())
            .collect();
        assert!(last[1] < 1.0 && last[1] > 0.0); // decaying occupation
        assert!(last[3] < 1e-8); // trace deviation column
    }

    #[test]
    fn validate_command_passes_for_exact4_and_fails_for_resonant() {
        let mut config = two_lead_config("val", "");
        config.correlation = Some(crate::config::CorrelationConfig {
            t_min: 0.0,
            t_max: 8.0,
            points: 33,
            k_table: 0,
            tolerance: 2e-2,
        });
        let resonant = cmd_validate(&config).unwrap();
        assert_eq!(resonant.manifest["pass"], json!(false));

        // raw Matsubara truncation converges like 1/K; K = 150 brings the
        // sup deviation near 1e-2
        config.construction.map = MapKind::Exact4;
        config.construction.k = 150;
        config.output.prefix = "v4".into();
        let exact = cmd_validate(&config).unwrap();
        assert_eq!(exact.manifest["pass"], json!(true));
    }

    #[test]
    fn fit_command_writes_report_fields() {
        let config = two_lead_config("fit", "");
        let outcome = cmd_fit(&config).unwrap();
        let fit = &outcome.manifest["fit"];
        assert!(fit["residual_l2"].as_f64().unwrap() > 0.0);
        assert!(fit["residual_sup"].as_f64().unwrap() > 0.0);
        assert_eq!(fit["terms"].as_array().unwrap().len(), 1);
    }
}
