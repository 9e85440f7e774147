//! Declarative run configuration: TOML with nested blocks, schema-checked on
//! load with precise error locations, fully echoed into output manifests.

use std::collections::BTreeMap;
use std::path::PathBuf;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bath::{Beta, LorentzianBathSpec};
use crate::engine::SystemSpec;
use crate::error::{PfError, Result};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemConfig,
    #[serde(rename = "bath")]
    pub baths: Vec<BathConfig>,
    #[serde(default)]
    pub construction: ConstructionConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub sweep: Option<SweepConfig>,
    #[serde(default)]
    pub spectrum: Option<SpectrumConfig>,
    #[serde(default)]
    pub evolve: Option<EvolveConfig>,
    #[serde(default)]
    pub correlation: Option<CorrelationConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    /// "single-level" or "anderson".
    pub model: String,
    pub epsilon: f64,
    #[serde(default)]
    pub u: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BathConfig {
    /// Lead name, e.g. "L" or "R"; must be unique per (lead, spin) channel.
    pub lead: String,
    /// "up", "down" or "both" (default: "both" for anderson, none for
    /// single-level).
    #[serde(default)]
    pub spin: Option<String>,
    pub coupling: f64,
    pub width: f64,
    pub mu: f64,
    pub beta: Beta,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MapKind {
    Resonant,
    Exact2,
    Exact4,
    Fitted,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConstructionConfig {
    pub map: MapKind,
    /// Matsubara truncation for the exact maps.
    pub k: usize,
    /// Number of fitted envelope terms.
    pub k_fit: usize,
    /// Regulator for two-mode maps. Keep modest when states are
    /// materialized: state entries scale like delta^(number of regulated
    /// modes) and cancel to O(1) observables.
    pub delta: f64,
    pub fit_t_min: f64,
    pub fit_t_max: f64,
    pub fit_points: usize,
    /// "uniform" or "geometric". Uniform weights the transport-relevant
    /// behavior of the envelope more evenly and gives visibly better steady
    /// currents than the geometric grid at the same number of points.
    pub fit_grid: String,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for ConstructionConfig {
    fn default() -> Self {
        ConstructionConfig {
            map: MapKind::Fitted,
            k: 1,
            k_fit: 1,
            delta: 1e2,
            fit_t_min: 1e-2,
            fit_t_max: 10.0,
            fit_points: 400,
            fit_grid: "uniform".into(),
            restarts: 16,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub rtol: f64,
    pub atol: f64,
    /// "auto", "rk" or "trbdf2".
    pub method: String,
    #[serde(default)]
    pub dt: Option<f64>,
    /// Largest vectorized dimension assembled into one sparse matrix.
    pub assemble_cap: usize,
    /// Largest total mode count accepted.
    pub mode_cap: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            rtol: 1e-8,
            atol: 1e-10,
            method: "auto".into(),
            dt: None,
            assemble_cap: 1 << 17,
            mode_cap: 16,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("out"),
            prefix: "run".into(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub dmu_min: f64,
    pub dmu_max: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    pub omega_min: f64,
    pub omega_max: f64,
    pub points: usize,
    #[serde(default)]
    pub spin: Option<String>,
    pub t_max: f64,
    pub dt: f64,
    pub eta: f64,
    pub decay_threshold: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig {
            omega_min: -10.0,
            omega_max: 10.0,
            points: 201,
            spin: None,
            t_max: 40.0,
            dt: 0.02,
            eta: 1e-3,
            decay_threshold: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvolveConfig {
    pub t_end: f64,
    pub points: usize,
    /// Initial occupation per system mode.
    pub initial: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CorrelationConfig {
    pub t_min: f64,
    pub t_max: f64,
    pub points: usize,
    /// Reference truncation for the decomposition table.
    pub k_table: usize,
    /// Sup-norm tolerance for `validate`.
    pub tolerance: f64,
}

impl Default for CorrelationConfig {
    fn default() -> Self {
        CorrelationConfig {
            t_min: 0.0,
            t_max: 10.0,
            points: 201,
            k_table: 200,
            tolerance: 1e-2,
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text)
            .map_err(|e| PfError::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    /// Deserialize from an already-parsed document (override pipelines).
    pub fn from_toml_value(doc: toml::Value) -> Result<Self> {
        let config: RunConfig = doc
            .try_into()
            .map_err(|e| PfError::Config(format!("{e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        match self.system.model.as_str() {
            "single-level" => {
                if self.system.u.is_some() {
                    return Err(PfError::Config(
                        "system.u is only meaningful for the anderson model".into(),
                    ));
                }
            }
            "anderson" => {
                if self.system.u.is_none() {
                    return Err(PfError::Config("anderson model requires system.u".into()));
                }
            }
            other => {
                return Err(PfError::Config(format!(
                    "unknown system.model {other:?} (expected \"single-level\" or \"anderson\")"
                )));
            }
        }
        if self.baths.is_empty() {
            return Err(PfError::Config("at least one [[bath]] block is required".into()));
        }
        let mut seen = BTreeMap::new();
        for (channel, bath) in self.resolve_channels()? {
            if seen.insert(channel, ()).is_some() {
                return Err(PfError::Config(format!(
                    "duplicate bath channel lead={} spin={}",
                    channel.0, channel.1
                )));
            }
            LorentzianBathSpec::new(bath.coupling, bath.width, bath.mu, bath.beta)?;
        }
        if self.construction.delta < crate::pf::MIN_ABS_DELTA
            && matches!(self.construction.map, MapKind::Exact2 | MapKind::Fitted)
        {
            return Err(PfError::Config(format!(
                "construction.delta = {} below the minimum {}",
                self.construction.delta,
                crate::pf::MIN_ABS_DELTA
            )));
        }
        Ok(())
    }

    pub fn system_spec(&self) -> Result<SystemSpec> {
        Ok(match self.system.model.as_str() {
            "single-level" => SystemSpec::single_level(self.system.epsilon),
            "anderson" => SystemSpec::anderson(self.system.epsilon, self.system.u.unwrap()),
            _ => unreachable!("validated"),
        })
    }

    /// Lead names in first-appearance order, mapped to indices.
    pub fn lead_names(&self) -> Vec<String> {
        let mut names: Vec<String> = Vec::new();
        for bath in &self.baths {
            if !names.contains(&bath.lead) {
                names.push(bath.lead.clone());
            }
        }
        names
    }

    /// Expand bath blocks into ((lead index, spin index), block) channels.
    pub fn resolve_channels(&self) -> Result<Vec<((usize, usize), &BathConfig)>> {
        let names = self.lead_names();
        let anderson = self.system.model == "anderson";
        let mut out = Vec::new();
        for bath in &self.baths {
            let lead = names.iter().position(|n| n == &bath.lead).unwrap();
            let spins: Vec<usize> = match bath.spin.as_deref() {
                None => {
                    if anderson {
                        vec![0, 1]
                    } else {
                        vec![0]
                    }
                }
                Some("both") => {
                    if anderson {
                        vec![0, 1]
                    } else {
                        return Err(PfError::Config(
                            "spin = \"both\" requires the anderson model".into(),
                        ));
                    }
                }
                Some("up") => vec![0],
                Some("down") => {
                    if !anderson {
                        return Err(PfError::Config(
                            "spin = \"down\" requires the anderson model".into(),
                        ));
                    }
                    vec![1]
                }
                Some(other) => {
                    return Err(PfError::Config(format!(
                        "unknown spin {other:?} (expected \"up\", \"down\" or \"both\")"
                    )));
                }
            };
            for spin in spins {
                out.push(((lead, spin), bath));
            }
        }
        Ok(out)
    }

    /// Reference coupling: the first bath's, used to label output units.
    pub fn gamma_ref(&self) -> f64 {
        self.baths.first().map(|b| b.coupling).unwrap_or(1.0)
    }

    pub fn delta(&self) -> Complex64 {
        Complex64::new(self.construction.delta, 0.0)
    }
}
