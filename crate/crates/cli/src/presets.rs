//! Built-in scenarios.

use nalgebra::{DMatrix, DVector};
use pdafpf::model::{
    bearing_observation_model, AssociationProcess, ClutterKind, ClutterModel, DynamicsModel, MotionSegment,
    ObservationModel, ScenarioModel, TruthMotion,
};

use crate::config::{BetaFilterKind, FilterKind, Initialization, ScenarioOverrides};
use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PresetInfo {
    pub name: &'static str,
    pub description: &'static str,
}

/// Defaults a preset brings along with its model.
#[derive(Debug, Clone, PartialEq)]
pub struct PresetDefaults {
    pub filters: Vec<FilterKind>,
    pub beta_filter: BetaFilterKind,
    pub particles: usize,
}

pub const PRESETS: [PresetInfo; 4] = [
    PresetInfo {
        name: "single-clutter",
        description: "one target with constant-velocity drift, 3 clutter returns in a disk of radius 2 around it",
    },
    PresetInfo {
        name: "ghost-two-target",
        description: "two targets, two bearing-only sensors, ghost at (0, 20); initialization truth or ghost",
    },
    PresetInfo {
        name: "coalescence",
        description: "two targets on a line meet, stop for 20 s, then separate",
    },
    PresetInfo {
        name: "linear-verification",
        description: "one linear target with one white-noise clutter channel, for the Kalman comparisons",
    },
];

pub fn list_scenarios() -> &'static [PresetInfo] {
    &PRESETS
}

/// Positions of the two bearing sensors in the ghost scenario.
pub const GHOST_SENSORS: [[f64; 2]; 2] = [[-20.0, -10.0], [20.0, -10.0]];

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_row_slice(x)
}

fn single_clutter() -> Result<(ScenarioModel, PresetDefaults)> {
    let x0 = v(&[0.0, 6.0]);
    let scenario = ScenarioModel {
        name: "single-clutter".into(),
        dynamics: vec![DynamicsModel::white_noise_acceleration(1, &[1.0])?],
        observation: ObservationModel::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 0.06)?,
        clutter: ClutterModel {
            kind: ClutterKind::UniformDisk { radius: 2.0 },
            count: 3,
        },
        horizon: 1.0,
        dt: 0.01,
        q: 10.0,
        initial_truth: vec![x0.clone()],
        initial_means: vec![x0],
        initial_covariance: DMatrix::from_diagonal(&v(&[0.1, 0.05])),
        truth_motion: TruthMotion::Diffusion,
        association: AssociationProcess::Markov,
        position_indices: vec![0],
        velocity_indices: vec![1],
    };
    Ok((
        scenario,
        PresetDefaults {
            filters: vec![FilterKind::PdaFpf],
            beta_filter: BetaFilterKind::Discrete,
            particles: 1000,
        },
    ))
}

fn ghost(init: Initialization) -> Result<(ScenarioModel, PresetDefaults)> {
    let truth = vec![v(&[-20.0, 0.0, 50.0, -5.0]), v(&[20.0, 0.0, 50.0, -5.0])];
    let means = match init {
        Initialization::Truth => truth.clone(),
        Initialization::Ghost => vec![v(&[0.0, 0.0, 20.0, -5.0]); 2],
    };
    let wna = DynamicsModel::white_noise_acceleration(2, &[0.5, 0.5])?;
    let scenario = ScenarioModel {
        name: "ghost-two-target".into(),
        dynamics: vec![wna.clone(), wna],
        observation: bearing_observation_model(&GHOST_SENSORS, 0.01)?,
        clutter: ClutterModel::none(),
        horizon: 10.0,
        dt: 0.01,
        q: 10.0,
        initial_truth: truth,
        initial_means: means,
        initial_covariance: DMatrix::from_diagonal(&v(&[10.0, 1.0, 10.0, 1.0])),
        truth_motion: TruthMotion::Diffusion,
        association: AssociationProcess::Markov,
        position_indices: vec![0, 2],
        velocity_indices: vec![1, 3],
    };
    Ok((
        scenario,
        PresetDefaults {
            filters: vec![FilterKind::JpdaFpf, FilterKind::SirPf],
            beta_filter: BetaFilterKind::Heuristic,
            particles: 200,
        },
    ))
}

/// Time at which the approaching targets are 50 apart.
pub const COALESCENCE_STOP: f64 = 29.0 / 3.0;

fn coalescence() -> Result<(ScenarioModel, PresetDefaults)> {
    let truth = vec![v(&[750.0, -75.0]), v(&[-750.0, 75.0])];
    let leg = |start: f64, velocity: f64| MotionSegment {
        start,
        velocity: vec![velocity],
    };
    let wna = DynamicsModel::white_noise_acceleration(1, &[25.0])?;
    let scenario = ScenarioModel {
        name: "coalescence".into(),
        dynamics: vec![wna.clone(), wna],
        observation: ObservationModel::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 10.0)?,
        clutter: ClutterModel::none(),
        horizon: 40.0,
        dt: 0.05,
        // Keeps q·dt at 0.1 as in the other presets; the Euler π step
        // oscillates at q·dt = 0.5.
        q: 2.0,
        initial_means: truth.clone(),
        initial_truth: truth,
        initial_covariance: DMatrix::from_diagonal(&v(&[100.0, 10.0])),
        truth_motion: TruthMotion::Scripted(vec![
            vec![leg(0.0, -75.0), leg(COALESCENCE_STOP, 0.0), leg(30.0, 75.0)],
            vec![leg(0.0, 75.0), leg(COALESCENCE_STOP, 0.0), leg(30.0, -75.0)],
        ]),
        association: AssociationProcess::Markov,
        position_indices: vec![0],
        velocity_indices: vec![1],
    };
    Ok((
        scenario,
        PresetDefaults {
            filters: vec![FilterKind::JpdaFpf, FilterKind::SirPf],
            beta_filter: BetaFilterKind::Continuous,
            particles: 1000,
        },
    ))
}

fn linear_verification() -> Result<(ScenarioModel, PresetDefaults)> {
    let x0 = v(&[0.0, 1.0]);
    let scenario = ScenarioModel {
        name: "linear-verification".into(),
        dynamics: vec![DynamicsModel::linear(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, -0.5]),
            v(&[0.0, 1.0]),
        )?],
        observation: ObservationModel::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 0.2)?,
        clutter: ClutterModel {
            kind: ClutterKind::GaussianWhiteNoise,
            count: 1,
        },
        horizon: 1.0,
        dt: 0.001,
        q: 10.0,
        initial_truth: vec![x0.clone()],
        initial_means: vec![x0],
        initial_covariance: DMatrix::from_diagonal(&v(&[0.1, 0.1])),
        truth_motion: TruthMotion::Diffusion,
        association: AssociationProcess::Markov,
        position_indices: vec![0],
        velocity_indices: vec![1],
    };
    Ok((
        scenario,
        PresetDefaults {
            filters: vec![FilterKind::PdaFpf, FilterKind::KalmanPdaf],
            beta_filter: BetaFilterKind::Continuous,
            particles: 1000,
        },
    ))
}

/// Builds a preset and applies `overrides`.
pub fn build(
    name: &str,
    init: Initialization,
    overrides: &ScenarioOverrides,
) -> Result<(ScenarioModel, PresetDefaults)> {
    if init == Initialization::Ghost && name != "ghost-two-target" {
        return Err(CliError::Config(format!("scenario {name} has no ghost initialization")));
    }
    let (mut scenario, defaults) = match name {
        "single-clutter" => single_clutter()?,
        "ghost-two-target" => ghost(init)?,
        "coalescence" => coalescence()?,
        "linear-verification" => linear_verification()?,
        _ => return Err(CliError::Config(format!("unknown scenario {name:?}"))),
    };
    if let Some(t) = overrides.horizon {
        scenario.horizon = t;
    }
    if let Some(dt) = overrides.dt {
        scenario.dt = dt;
    }
    if let Some(q) = overrides.q {
        scenario.q = q;
    }
    if let Some(sigma) = overrides.observation_noise {
        scenario.observation = ObservationModel::new(scenario.observation.map_arc(), sigma)?;
    }
    if let Some(count) = overrides.clutter_count {
        scenario.clutter.count = count;
    }
    scenario.validate()?;
    Ok((scenario, defaults))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn listing_is_stable() {
        let names: Vec<&str> = list_scenarios().iter().map(|p| p.name).collect();
        assert_eq!(
            names,
            [
                "single-clutter",
                "ghost-two-target",
                "coalescence",
                "linear-verification"
            ]
        );
        assert_eq!(names, list_scenarios().iter().map(|p| p.name).collect::<Vec<_>>());
    }

    #[test]
    fn every_preset_builds() {
        for p in list_scenarios() {
            build(p.name, Initialization::Truth, &ScenarioOverrides::default()).unwrap();
        }
        assert!(build("nope", Initialization::Truth, &ScenarioOverrides::default()).is_err());
        assert!(build("coalescence", Initialization::Ghost, &ScenarioOverrides::default()).is_err());
    }

    #[test]
    fn ghost_is_where_wrong_bearings_cross() {
        let (s, _) = build("ghost-two-target", Initialization::Ghost, &ScenarioOverrides::default()).unwrap();
        let map = s.observation.map();
        let t1 = map.eval(s.initial_truth[0].as_view()).unwrap();
        let t2 = map.eval(s.initial_truth[1].as_view()).unwrap();
        let g = map.eval(s.initial_means[0].as_view()).unwrap();
        // Sensor 1 sees target 2's bearing, sensor 2 sees target 1's.
        assert!((g[0] - t2[0]).abs() < 1e-12);
        assert!((g[1] - t1[1]).abs() < 1e-12);
    }

    #[test]
    fn overrides_apply() {
        let o = ScenarioOverrides {
            horizon: Some(0.1),
            observation_noise: Some(0.2),
            ..Default::default()
        };
        let (s, _) = build("single-clutter", Initialization::Truth, &o).unwrap();
        assert_eq!(s.n_steps(), 10);
        assert_eq!(s.observation.noise_scale(), 0.2);
    }
}
