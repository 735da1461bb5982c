//! Single runs and Monte-Carlo campaigns.

use nalgebra::DVector;
use pdafpf::gain::GainMethod;
use pdafpf::jpda::{jpda_fpf_step, JointFilter, JpdaConfig, MultiTargetState};
use pdafpf::linear::{classical_pdaf_step, linear_beta_step, GaussianBelief, LinearModel};
use pdafpf::metrics::RunRecord;
use pdafpf::model::{simulate_observations, simulate_truth, ClutterKind, ObservationFrame, ScenarioModel};
use pdafpf::noise::{tags, NoiseKey};
use pdafpf::pda::{pda_fpf_step, AssociationBelief, BetaFilter, ClutterDensity, PdaConfig, PdaFpfState};
use pdafpf::sirpf::{sir_step, SirConfig, WeightedEnsemble};
use pdafpf::Ensemble;
use rayon::prelude::*;

use crate::config::{BetaFilterKind, FilterKind};
use crate::error::{CliError, Result};

/// One filter with its settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSetup {
    pub filter: FilterKind,
    pub beta_filter: BetaFilterKind,
    pub gain: GainMethod,
    pub particles: usize,
}

/// Clutter density matching the scenario's clutter generator. Without
/// clutter every slot belongs to some target and the density only fixes
/// a common scale.
pub fn clutter_density(scenario: &ScenarioModel) -> ClutterDensity {
    if scenario.clutter.count == 0 {
        return ClutterDensity::Uniform { volume: 1.0 };
    }
    match scenario.clutter.kind {
        ClutterKind::GaussianWhiteNoise => ClutterDensity::Gaussian,
        ClutterKind::UniformDisk { radius } => {
            let s = scenario.observation.dim_obs();
            let volume = match s {
                1 => 2.0 * radius,
                2 => std::f64::consts::PI * radius * radius,
                _ => {
                    let half = s as f64 / 2.0;
                    std::f64::consts::PI.powf(half) * radius.powi(s as i32) / gamma_half_plus_one(s)
                }
            };
            ClutterDensity::Uniform { volume }
        }
    }
}

/// `Γ(s/2 + 1)`.
fn gamma_half_plus_one(s: usize) -> f64 {
    let mut g = if s.is_multiple_of(2) {
        1.0
    } else {
        std::f64::consts::PI.sqrt() / 2.0
    };
    let mut x = if s.is_multiple_of(2) { 1.0 } else { 1.5 };
    while x < s as f64 / 2.0 + 1.0 - 1e-9 {
        g *= x;
        x += 1.0;
    }
    g
}

/// Rejects filter/scenario combinations that make no sense.
pub fn check_compatibility(scenario: &ScenarioModel, setup: &FilterSetup) -> Result<()> {
    let n = scenario.n_targets();
    let err = |msg: String| Err(CliError::Config(msg));
    if setup.particles < 2 && setup.filter != FilterKind::KalmanPdaf {
        return err("particles must be ≥ 2".into());
    }
    match setup.filter {
        FilterKind::PdaFpf | FilterKind::KalmanPdaf if n != 1 => err(format!(
            "{} needs a single-target scenario, {} has {n}",
            setup.filter.label(),
            scenario.name
        )),
        FilterKind::JpdaFpf if n < 2 => err(format!("jpda-fpf needs several targets, {} has one", scenario.name)),
        FilterKind::PdaFpf if setup.beta_filter == BetaFilterKind::Heuristic => {
            err("the heuristic association filter is for jpda-fpf".into())
        }
        FilterKind::JpdaFpf if setup.beta_filter == BetaFilterKind::Discrete => {
            err("jpda-fpf takes continuous or heuristic association filters".into())
        }
        FilterKind::KalmanPdaf if setup.beta_filter != BetaFilterKind::Continuous => {
            err("kalman-pdaf takes the continuous association filter".into())
        }
        FilterKind::KalmanPdaf => {
            LinearModel::from_models(&scenario.dynamics[0], &scenario.observation)?;
            Ok(())
        }
        _ => Ok(()),
    }
}

fn initial_ensembles(scenario: &ScenarioModel, particles: usize, seed: u64) -> Result<Vec<Ensemble>> {
    let key = NoiseKey::new(seed).derive(tags::INITIAL);
    scenario
        .initial_means
        .iter()
        .enumerate()
        .map(|(n, mean)| {
            Ensemble::sample_gaussian(mean, &scenario.initial_covariance, particles, key.derive(n as u64))
                .map_err(Into::into)
        })
        .collect()
}

struct Trajectory {
    estimates: Vec<Vec<DVector<f64>>>,
    trace: Vec<Vec<f64>>,
}

impl Trajectory {
    fn new(n_targets: usize) -> Self {
        Self {
            estimates: vec![Vec::new(); n_targets],
            trace: Vec::new(),
        }
    }

    fn push(&mut self, means: Vec<DVector<f64>>, trace: Vec<f64>) {
        for (path, m) in self.estimates.iter_mut().zip(means) {
            path.push(m);
        }
        self.trace.push(trace);
    }
}

fn run_pda(
    scenario: &ScenarioModel,
    setup: &FilterSetup,
    frames: &[ObservationFrame],
    seed: u64,
) -> Result<Trajectory> {
    let ensemble = initial_ensembles(scenario, setup.particles, seed)?.remove(0);
    let obs = &scenario.observation;
    let config = PdaConfig {
        gain: setup.gain,
        beta_filter: match setup.beta_filter {
            BetaFilterKind::Discrete => BetaFilter::Discrete(clutter_density(scenario)),
            _ => BetaFilter::Continuous,
        },
        q: scenario.q,
    };
    let key = NoiseKey::new(seed);
    let flatten = |s: &PdaFpfState| s.beliefs.iter().flat_map(|b| b.values().iter().copied()).collect();
    let mut state = PdaFpfState::new(ensemble, obs, scenario.observations_per_step(), 0.0)?;
    let mut out = Trajectory::new(1);
    out.push(vec![state.ensemble.mean()], flatten(&state));
    for frame in frames {
        state = pda_fpf_step(
            &state,
            &scenario.dynamics[0],
            obs,
            &frame.scan,
            scenario.dt,
            &config,
            key,
        )?;
        out.push(vec![state.ensemble.mean()], flatten(&state));
    }
    Ok(out)
}

fn run_jpda(
    scenario: &ScenarioModel,
    setup: &FilterSetup,
    frames: &[ObservationFrame],
    seed: u64,
) -> Result<Trajectory> {
    let obs = &scenario.observation;
    let config = JpdaConfig {
        gain: setup.gain,
        joint_filter: match setup.beta_filter {
            BetaFilterKind::Continuous => JointFilter::Continuous,
            _ => JointFilter::Heuristic,
        },
        q: scenario.q,
    };
    let key = NoiseKey::new(seed);
    let flatten = |s: &MultiTargetState| s.joints.iter().flat_map(|j| j.values().iter().copied()).collect();
    let means = |s: &MultiTargetState| s.targets.iter().map(Ensemble::mean).collect();
    let mut state = MultiTargetState::new(initial_ensembles(scenario, setup.particles, seed)?, obs, 0.0)?;
    let mut out = Trajectory::new(scenario.n_targets());
    out.push(means(&state), flatten(&state));
    for frame in frames {
        state = jpda_fpf_step(&state, &scenario.dynamics, obs, &frame.scan, scenario.dt, &config, key)?;
        out.push(means(&state), flatten(&state));
    }
    Ok(out)
}

fn run_sir(
    scenario: &ScenarioModel,
    setup: &FilterSetup,
    frames: &[ObservationFrame],
    seed: u64,
) -> Result<Trajectory> {
    let config = SirConfig {
        clutter: clutter_density(scenario),
        ..SirConfig::default()
    };
    let key = NoiseKey::new(seed);
    let mut banks: Vec<WeightedEnsemble> = initial_ensembles(scenario, setup.particles, seed)?
        .into_iter()
        .map(WeightedEnsemble::uniform)
        .collect();
    let ess = |b: &[WeightedEnsemble]| {
        b.iter()
            .map(|w| pdafpf::sirpf::effective_sample_size(&w.weights))
            .collect()
    };
    let mut out = Trajectory::new(scenario.n_targets());
    out.push(banks.iter().map(WeightedEnsemble::mean).collect(), ess(&banks));
    for (k, frame) in frames.iter().enumerate() {
        let time = k as f64 * scenario.dt;
        banks = banks
            .iter()
            .enumerate()
            .map(|(n, w)| {
                let step = sir_step(
                    w,
                    &scenario.dynamics[n],
                    &scenario.observation,
                    &frame.scan,
                    time,
                    scenario.dt,
                    &config,
                    key.derive(n as u64),
                    k as u64,
                )?;
                Ok(step.weighted)
            })
            .collect::<Result<_>>()?;
        out.push(banks.iter().map(WeightedEnsemble::mean).collect(), ess(&banks));
    }
    Ok(out)
}

fn run_kalman(scenario: &ScenarioModel, frames: &[ObservationFrame]) -> Result<Trajectory> {
    let model = LinearModel::from_models(&scenario.dynamics[0], &scenario.observation)?;
    let mut belief = GaussianBelief::new(scenario.initial_means[0].clone(), scenario.initial_covariance.clone())?;
    let mut beta = AssociationBelief::uniform(scenario.observations_per_step())?;
    let mut out = Trajectory::new(1);
    out.push(vec![belief.mean.clone()], beta.values().iter().copied().collect());
    for frame in frames {
        let dz = &frame.scan.groups[0];
        let next = classical_pdaf_step(&belief, &model, &beta, dz, scenario.dt)?;
        beta = linear_beta_step(&beta, &belief.mean, &model, dz, scenario.q, scenario.dt)?;
        belief = next;
        out.push(vec![belief.mean.clone()], beta.values().iter().copied().collect());
    }
    Ok(out)
}

/// Simulates truth and observations for `seed` and runs one filter on them.
pub fn run_single(scenario: &ScenarioModel, setup: &FilterSetup, seed: u64) -> Result<RunRecord> {
    check_compatibility(scenario, setup)?;
    let truth = simulate_truth(scenario, seed)?;
    let frames = simulate_observations(scenario, &truth, seed)?;
    let traj = match setup.filter {
        FilterKind::PdaFpf => run_pda(scenario, setup, &frames, seed)?,
        FilterKind::JpdaFpf => run_jpda(scenario, setup, &frames, seed)?,
        FilterKind::SirPf => run_sir(scenario, setup, &frames, seed)?,
        FilterKind::KalmanPdaf => run_kalman(scenario, &frames)?,
    };
    let record = RunRecord {
        scenario: scenario.name.clone(),
        seed,
        times: (0..=scenario.n_steps()).map(|k| k as f64 * scenario.dt).collect(),
        truth,
        estimates: traj.estimates,
        beta_trace: traj.trace,
        position_indices: scenario.position_indices.clone(),
    };
    record.validate()?;
    Ok(record)
}

/// Runs `base_seed + k` for `k < runs` in parallel; results are in seed
/// order.
pub fn run_campaign(
    scenario: &ScenarioModel,
    setup: &FilterSetup,
    runs: usize,
    base_seed: u64,
) -> Result<Vec<RunRecord>> {
    check_compatibility(scenario, setup)?;
    (0..runs as u64)
        .into_par_iter()
        .map(|k| run_single(scenario, setup, base_seed + k))
        .collect()
}
