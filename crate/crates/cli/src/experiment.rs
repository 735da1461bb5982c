//! Config-driven Monte-Carlo experiments.

use pdafpf::metrics::{avg_rmse, percent_tracks_ok, RunRecord};
use pdafpf::model::ScenarioModel;
use serde::Serialize;

use crate::config::{BetaFilterKind, ExperimentConfig, FilterKind};
use crate::error::Result;
use crate::output::write_outputs;
use crate::presets::build;
use crate::runner::{check_compatibility, run_campaign, FilterSetup};

/// Bumped whenever a CSV or JSON layout changes.
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub filter: FilterKind,
    pub beta_filter: BetaFilterKind,
    pub particles: usize,
    pub avg_rmse: f64,
    pub percent_tracks_ok: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryTable {
    pub schema_version: u32,
    pub scenario: String,
    pub runs: usize,
    pub base_seed: u64,
    pub rows: Vec<SummaryRow>,
}

impl SummaryTable {
    pub fn render(&self) -> String {
        let mut out = format!(
            "scenario {}  runs {}  base seed {}\n{:<12} {:>12} {:>10}\n",
            self.scenario, self.runs, self.base_seed, "filter", "avg RMSE", "% OK"
        );
        for row in &self.rows {
            out.push_str(&format!(
                "{:<12} {:>12.4} {:>10.1}\n",
                row.filter.label(),
                row.avg_rmse,
                row.percent_tracks_ok
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scenario: ScenarioModel,
    pub summary: SummaryTable,
    pub setups: Vec<FilterSetup>,
    pub records: Vec<Vec<RunRecord>>,
}

/// The filter setups a config asks for, after preset defaults.
pub fn resolve(config: &ExperimentConfig) -> Result<(ScenarioModel, Vec<FilterSetup>)> {
    config.check()?;
    let (scenario, defaults) = build(
        &config.scenario,
        config.initialization.unwrap_or_default(),
        &config.overrides,
    )?;
    let filters = config.filters.clone().unwrap_or(defaults.filters);
    let setups = filters
        .into_iter()
        .map(|filter| FilterSetup {
            filter,
            beta_filter: config.beta_filter.unwrap_or(match filter {
                FilterKind::KalmanPdaf => BetaFilterKind::Continuous,
                _ => defaults.beta_filter,
            }),
            gain: config.gain.method(),
            particles: config.particles.unwrap_or(defaults.particles),
        })
        .collect::<Vec<_>>();
    for s in &setups {
        check_compatibility(&scenario, s)?;
    }
    Ok((scenario, setups))
}

/// Runs every filter of the config and writes the artifacts when an output
/// directory is set. `seed_override` replaces the config's base seed.
pub fn run_experiment(config: &ExperimentConfig, seed_override: Option<u64>) -> Result<ExperimentResult> {
    let (scenario, setups) = resolve(config)?;
    let base_seed = seed_override.unwrap_or(config.base_seed);
    let sigma_w = scenario.observation.noise_scale();
    let mut rows = Vec::with_capacity(setups.len());
    let mut records = Vec::with_capacity(setups.len());
    for setup in &setups {
        let runs = run_campaign(&scenario, setup, config.runs, base_seed)?;
        rows.push(SummaryRow {
            filter: setup.filter,
            beta_filter: setup.beta_filter,
            particles: setup.particles,
            avg_rmse: avg_rmse(&runs)?,
            percent_tracks_ok: percent_tracks_ok(&runs, sigma_w)?,
        });
        records.push(runs);
    }
    let result = ExperimentResult {
        summary: SummaryTable {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            runs: config.runs,
            base_seed,
            rows,
        },
        scenario,
        setups,
        records,
    };
    if let Some(dir) = &config.output_dir {
        write_outputs(dir, &result)?;
    }
    Ok(result)
}
