//! Python bindings: reservoir correlations, pseudo-fermion bath construction,
//! envelope fits, and the full workflow commands driven by TOML configs.

use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pfsim_core::bath::fit::{fit_matsubara_envelope, FitOptions, FitTerm};
use pfsim_core::bath::quad::correlation_quadrature;
use pfsim_core::bath::{
    correlation_decomposed, matsubara_term, matsubara_zero_t, resonant_correlation, Beta,
    LorentzianBathSpec, Sigma,
};
use pfsim_core::config::RunConfig;
use pfsim_core::pf::{pf_bath_correlation, validate_bath, PseudoFermionBath};
use pfsim_core::util::{geometric_grid, linear_grid};

fn to_py_err(e: pfsim_core::PfError) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn sigma_from(value: i32) -> PyResult<Sigma> {
    match value {
        1 => Ok(Sigma::Plus),
        -1 => Ok(Sigma::Minus),
        other => Err(PyValueError::new_err(format!(
            "sigma must be +1 or -1, got {other}"
        ))),
    }
}

/// A Lorentzian reservoir: coupling Gamma, width W, chemical potential mu,
/// inverse temperature beta (math.inf for zero temperature).
#[pyclass]
#[derive(Clone)]
struct LorentzianBath {
    spec: LorentzianBathSpec,
}

#[pymethods]
impl LorentzianBath {
    #[new]
    fn new(coupling: f64, width: f64, mu: f64, beta: f64) -> PyResult<Self> {
        let spec = LorentzianBathSpec::new(coupling, width, mu, Beta::from_f64(beta))
            .map_err(to_py_err)?;
        Ok(LorentzianBath { spec })
    }

    fn fermi_occupation(&self, omega: f64) -> f64 {
        pfsim_core::bath::fermi_occupation(omega, &self.spec)
    }

    fn spectral_density(&self, omega: f64) -> f64 {
        pfsim_core::bath::lorentzian_spectral_density(omega, &self.spec)
    }

    /// Exact correlation C^sigma(t) by adaptive quadrature (finite beta).
    fn correlation_exact(&self, sigma: i32, t: f64) -> PyResult<Complex64> {
        correlation_quadrature(sigma_from(sigma)?, t, &self.spec).map_err(to_py_err)
    }

    /// Resonant term plus k_max Matsubara contributions.
    fn correlation_decomposed(&self, sigma: i32, t: f64, k_max: usize) -> PyResult<Complex64> {
        correlation_decomposed(sigma_from(sigma)?, t, &self.spec, k_max).map_err(to_py_err)
    }

    fn resonant_correlation(&self, sigma: i32, t: f64) -> PyResult<Complex64> {
        Ok(resonant_correlation(sigma_from(sigma)?, t, &self.spec))
    }

    /// Zero-temperature Matsubara integral (beta must be inf, t nonzero).
    fn matsubara_zero_temperature(&self, sigma: i32, t: f64) -> PyResult<Complex64> {
        matsubara_zero_t(sigma_from(sigma)?, t, &self.spec).map_err(to_py_err)
    }

    /// (x_k, M_k) for the k-th Matsubara pole.
    fn matsubara_term(&self, k: usize) -> PyResult<(f64, Complex64)> {
        let term = matsubara_term(k, &self.spec).map_err(to_py_err)?;
        Ok((term.frequency, term.amplitude))
    }

    /// Fit the Matsubara envelope; returns (terms, report) where each term is
    /// (amplitude, rate_like, width_like).
    #[pyo3(signature = (n_terms=1, t_min=1e-3, t_max=10.0, points=400, restarts=16, seed=1))]
    fn fit_envelope<'py>(
        &self,
        py: Python<'py>,
        n_terms: usize,
        t_min: f64,
        t_max: f64,
        points: usize,
        restarts: usize,
        seed: u64,
    ) -> PyResult<(Vec<(Complex64, f64, f64)>, Bound<'py, PyDict>)> {
        let grid = geometric_grid(t_min, t_max, points);
        let opts = FitOptions {
            n_terms,
            restarts,
            seed,
            max_iterations: 400,
        };
        let (terms, report) = fit_matsubara_envelope(&self.spec, &grid, &opts).map_err(to_py_err)?;
        let out: Vec<(Complex64, f64, f64)> = terms
            .iter()
            .map(|f| (f.amplitude, f.rate_like, f.width_like))
            .collect();
        let dict = PyDict::new(py);
        dict.set_item("residual_l2", report.residual_l2)?;
        dict.set_item("residual_sup", report.residual_sup)?;
        dict.set_item("target_peak", report.target_peak)?;
        dict.set_item("converged", report.converged)?;
        dict.set_item("best_restart", report.best_restart)?;
        Ok((out, dict))
    }

    fn __repr__(&self) -> String {
        format!(
            "LorentzianBath(coupling={}, width={}, mu={}, beta={:?})",
            self.spec.coupling, self.spec.width, self.spec.mu, self.spec.beta
        )
    }
}

/// A constructed pseudo-fermion replacement of one reservoir channel.
#[pyclass]
#[derive(Clone)]
struct PseudoBath {
    inner: PseudoFermionBath,
}

#[pymethods]
impl PseudoBath {
    #[staticmethod]
    fn resonant(bath: &LorentzianBath) -> PyResult<Self> {
        Ok(PseudoBath {
            inner: PseudoFermionBath::resonant_only(&bath.spec, 0, 0).map_err(to_py_err)?,
        })
    }

    /// Resonant plus two regulated modes per Matsubara term, k = 1..k_max.
    #[staticmethod]
    #[pyo3(signature = (bath, k_max, delta=1e6))]
    fn exact_two(bath: &LorentzianBath, k_max: usize, delta: f64) -> PyResult<Self> {
        Ok(PseudoBath {
            inner: PseudoFermionBath::exact_two(
                &bath.spec,
                k_max,
                Complex64::new(delta, 0.0),
                0,
                0,
            )
            .map_err(to_py_err)?,
        })
    }

    /// Resonant plus four unregulated modes per Matsubara term.
    #[staticmethod]
    fn exact_four(bath: &LorentzianBath, k_max: usize) -> PyResult<Self> {
        Ok(PseudoBath {
            inner: PseudoFermionBath::exact_four(&bath.spec, k_max, 0, 0).map_err(to_py_err)?,
        })
    }

    /// Resonant plus two regulated modes per fitted envelope term.
    #[staticmethod]
    #[pyo3(signature = (bath, terms, delta=1e2))]
    fn fitted(
        bath: &LorentzianBath,
        terms: Vec<(Complex64, f64, f64)>,
        delta: f64,
    ) -> PyResult<Self> {
        let terms: Vec<FitTerm> = terms
            .into_iter()
            .map(|(amplitude, rate_like, width_like)| FitTerm {
                amplitude,
                rate_like,
                width_like,
            })
            .collect();
        Ok(PseudoBath {
            inner: PseudoFermionBath::fitted(
                &bath.spec,
                &terms,
                Complex64::new(delta, 0.0),
                0,
                0,
            )
            .map_err(to_py_err)?,
        })
    }

    #[getter]
    fn n_modes(&self) -> usize {
        self.inner.n_modes()
    }

    /// Summed free correlation of the mode set.
    fn correlation(&self, sigma: i32, t: f64) -> PyResult<Complex64> {
        Ok(pf_bath_correlation(&self.inner.modes, sigma_from(sigma)?, t))
    }

    /// Per-mode parameters as dicts with n, coupling, coupling_sq, frequency,
    /// damping.
    fn modes<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, PyDict>>> {
        self.inner
            .modes
            .iter()
            .map(|m| {
                let d = PyDict::new(py);
                d.set_item("occupation", m.occupation)?;
                d.set_item("coupling", m.coupling)?;
                d.set_item("coupling_sq", m.coupling_sq)?;
                d.set_item("frequency", m.frequency)?;
                d.set_item("damping", m.damping)?;
                Ok(d)
            })
            .collect()
    }

    /// Sup/L2 deviation from the exact correlation on a uniform grid.
    #[pyo3(signature = (bath, t_max=10.0, points=101, tolerance=1e-2))]
    fn validate<'py>(
        &self,
        py: Python<'py>,
        bath: &LorentzianBath,
        t_max: f64,
        points: usize,
        tolerance: f64,
    ) -> PyResult<Bound<'py, PyDict>> {
        let grid = linear_grid(0.0, t_max, points);
        let report = validate_bath(&self.inner, &bath.spec, &grid, &Sigma::BOTH, tolerance)
            .map_err(to_py_err)?;
        let dict = PyDict::new(py);
        dict.set_item("pass", report.pass)?;
        dict.set_item("tolerance", report.tolerance)?;
        dict.set_item("max_sup", report.max_sup())?;
        Ok(dict)
    }

    /// Exact round-trip descriptor (JSON).
    fn descriptor(&self) -> String {
        self.inner.to_descriptor()
    }
}

/// Run one workflow command ("decompose", "fit", "validate", "evolve",
/// "steady", "sweep-current" or "spectrum") on a TOML configuration string;
/// returns the manifest as a JSON string and writes the configured output
/// files.
#[pyfunction]
fn run(command: &str, config_toml: &str) -> PyResult<String> {
    let config = RunConfig::from_toml_str(config_toml).map_err(to_py_err)?;
    let outcome = match command {
        "decompose" => pfsim_core::workflows::cmd_decompose(&config),
        "fit" => pfsim_core::workflows::cmd_fit(&config),
        "validate" => pfsim_core::workflows::cmd_validate(&config),
        "evolve" => pfsim_core::workflows::cmd_evolve(&config),
        "steady" => pfsim_core::workflows::cmd_steady(&config),
        "sweep-current" => pfsim_core::workflows::cmd_sweep_current(&config),
        "spectrum" => pfsim_core::workflows::cmd_spectrum(&config),
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown command {other:?}"
            )))
        }
    }
    .map_err(to_py_err)?;
    Ok(serde_json::to_string_pretty(&outcome.manifest).expect("manifest serializes"))
}

/// Exact steady current of the non-interacting level between two Lorentzian
/// leads (transmission-integral reference).
#[pyfunction]
fn exact_level_current(
    epsilon: f64,
    left: &LorentzianBath,
    right: &LorentzianBath,
) -> PyResult<f64> {
    pfsim_core::oracles::exact_level_current(&pfsim_core::oracles::TransmissionModel {
        epsilon,
        left: left.spec,
        right: right.spec,
    })
    .map_err(to_py_err)
}

#[pymodule]
fn pfsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<LorentzianBath>()?;
    m.add_class::<PseudoBath>()?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    m.add_function(wrap_pyfunction!(exact_level_current, m)?)?;
    Ok(())
}
