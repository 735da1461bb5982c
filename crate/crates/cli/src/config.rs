//! Experiment configuration, read from JSON.
//!
//! ```json
//! {
//!   "scenario": "coalescence",
//!   "filters": ["sir-pf", "jpda-fpf"],
//!   "particles": 500,
//!   "runs": 20,
//!   "base_seed": 1
//! }
//! ```
//!
//! Omitted fields take the preset's defaults. `overrides` replaces
//! individual scenario parameters.

use std::path::{Path, PathBuf};

use pdafpf::gain::{BasisSet, GainMethod};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKind {
    PdaFpf,
    JpdaFpf,
    SirPf,
    KalmanPdaf,
}

impl FilterKind {
    pub fn label(self) -> &'static str {
        match self {
            FilterKind::PdaFpf => "pda-fpf",
            FilterKind::JpdaFpf => "jpda-fpf",
            FilterKind::SirPf => "sir-pf",
            FilterKind::KalmanPdaf => "kalman-pdaf",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaFilterKind {
    Continuous,
    Discrete,
    Heuristic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GainSpec {
    #[default]
    Constant,
    GalerkinCoordinates,
    GalerkinQuadratic,
}

impl GainSpec {
    pub fn method(self) -> GainMethod {
        match self {
            GainSpec::Constant => GainMethod::Constant,
            GainSpec::GalerkinCoordinates => GainMethod::Galerkin(BasisSet::Coordinates),
            GainSpec::GalerkinQuadratic => GainMethod::Galerkin(BasisSet::Quadratic),
        }
    }
}

/// Where the filters' initial particle clouds are centred.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Initialization {
    #[default]
    Truth,
    Ghost,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioOverrides {
    pub horizon: Option<f64>,
    pub dt: Option<f64>,
    pub q: Option<f64>,
    pub observation_noise: Option<f64>,
    pub clutter_count: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: String,
    #[serde(default)]
    pub initialization: Option<Initialization>,
    #[serde(default)]
    pub filters: Option<Vec<FilterKind>>,
    #[serde(default)]
    pub beta_filter: Option<BetaFilterKind>,
    #[serde(default)]
    pub gain: GainSpec,
    #[serde(default)]
    pub particles: Option<usize>,
    #[serde(default = "one")]
    pub runs: usize,
    #[serde(default)]
    pub base_seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub overrides: ScenarioOverrides,
}

fn one() -> usize {
    1
}

impl ExperimentConfig {
    /// Config for a preset with every default.
    pub fn preset(name: &str) -> Self {
        Self {
            scenario: name.into(),
            initialization: None,
            filters: None,
            beta_filter: None,
            gain: GainSpec::Constant,
            particles: None,
            runs: 1,
            base_seed: 0,
            output_dir: None,
            overrides: ScenarioOverrides::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.check()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn check(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(CliError::Config("runs must be ≥ 1".into()));
        }
        if matches!(self.particles, Some(n) if n < 2) {
            return Err(CliError::Config("particles must be ≥ 2".into()));
        }
        if matches!(&self.filters, Some(f) if f.is_empty()) {
            return Err(CliError::Config("filter list is empty".into()));
        }
        Ok(())
    }
}
