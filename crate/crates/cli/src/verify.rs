//! Self-checks against independent references.
//!
//! Each check returns measured statistics next to their limits; a check
//! passes when every statistic is at or below its limit. The suites call
//! the checks at full size by default; `size_scale` shrinks the sample
//! counts for quick runs and `tolerance_scale` multiplies every limit.

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use pdafpf::fpf::{fpf_step, particle_noise, FpfState, Predictions};
use pdafpf::gain::{constant_gain, GainMethod};
use pdafpf::jpda::{joint_pi_step_general, joint_pi_step_two_target, marginalize_beta, permutations, JointBelief};
use pdafpf::linear::{kalman_bucy_step, linear_pda_fpf_step, moment_oracle_step, GaussianBelief, LinearModel};
use pdafpf::model::{
    simulate_observations, simulate_truth, AssociationProcess, ClutterKind, ClutterModel, DynamicsModel, FnDrift,
    FnMap, ObservationModel, ScenarioModel, TruthMotion,
};
use pdafpf::noise::{tags, NoiseKey};
use pdafpf::oracle::{distribution_distance, ks_step, Grid, GridDensity};
use pdafpf::pda::{
    beta_increment_continuous, beta_step_continuous, beta_step_discrete_from, pda_fpf_step, AssociationBelief,
    BetaFilter, ClutterDensity, PdaConfig, PdaFpfState,
};
use pdafpf::Ensemble;
use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Initialization, ScenarioOverrides};
use crate::error::Result;
use crate::presets::build;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Statistic {
    pub label: String,
    pub value: f64,
    pub limit: f64,
}

impl Statistic {
    fn new(label: &str, value: f64, limit: f64) -> Self {
        Self {
            label: label.into(),
            value,
            limit,
        }
    }

    /// NaN never passes.
    pub fn passed(&self) -> bool {
        self.value <= self.limit
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub statistics: Vec<Statistic>,
    pub seconds: f64,
}

impl Check {
    fn new(name: &str, statistics: Vec<Statistic>, started: Instant) -> Self {
        Self {
            name: name.into(),
            passed: statistics.iter().all(Statistic::passed),
            statistics,
            seconds: started.elapsed().as_secs_f64(),
        }
    }

    /// Multiplies every limit by `factor` and re-evaluates.
    pub fn scaled(mut self, factor: f64) -> Self {
        for s in &mut self.statistics {
            s.limit *= factor;
        }
        self.passed = self.statistics.iter().all(Statistic::passed);
        self
    }

    pub fn summary_line(&self) -> String {
        let stats: Vec<String> = self
            .statistics
            .iter()
            .map(|s| format!("{} = {:.4e} (limit {:.4e})", s.label, s.value, s.limit))
            .collect();
        format!(
            "{} {}: {} [{:.2} s]",
            if self.passed { "PASS" } else { "FAIL" },
            self.name,
            stats.join(", "),
            self.seconds
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Suite {
    Linear,
    Consistency,
    Association,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerifyOptions {
    pub tolerance_scale: f64,
    pub size_scale: f64,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tolerance_scale: 1.0,
            size_scale: 1.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Report {
    pub suite: Suite,
    pub passed: bool,
    pub checks: Vec<Check>,
}

pub fn verify(suite: Suite, opts: &VerifyOptions) -> Result<Report> {
    let size = |n: usize| ((n as f64 * opts.size_scale).round() as usize).max(2);
    let seed = opts.seed;
    let checks = match suite {
        Suite::Linear => vec![
            gain_identity(size(100_000), 5, seed)?,
            linear_kalman(size(10_000), seed)?,
            moment_oracle(size(10_000), seed)?,
        ],
        Suite::Consistency => vec![
            grid_consistency(size(5_000), 2_000, seed)?,
            beta_agreement(size(20).min(20), size(1_000), seed)?,
        ],
        Suite::Association => vec![
            beta_simplex(size(1_000_000), seed)?,
            jpda_reductions(size(10_000), seed)?,
        ],
    };
    let checks: Vec<Check> = checks.into_iter().map(|c| c.scaled(opts.tolerance_scale)).collect();
    Ok(Report {
        suite,
        passed: checks.iter().all(|c| c.passed),
        checks,
    })
}

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Constant gain of Gaussian samples against `ΣHᵀ`, worst relative
/// Frobenius error over `cases` random models.
pub fn gain_identity(samples: usize, cases: u64, seed: u64) -> Result<Check> {
    let started = Instant::now();
    let key = NoiseKey::new(seed).derive(0x6761_696e);
    let mut worst: f64 = 0.0;
    for case in 0..cases {
        let mut rng = key.rng(case, 0);
        let d = rng.random_range(1..=4usize);
        let s = rng.random_range(1..=2usize);
        let mean = DVector::from_fn(d, |_, _| rng.random_range(-2.0..2.0));
        let l = DMatrix::from_fn(d, d, |i, j| if j <= i { normal(&mut rng) } else { 0.0 });
        let cov = &l * l.transpose() + DMatrix::identity(d, d) * 0.2;
        let h = DMatrix::from_fn(s, d, |_, _| normal(&mut rng));
        let ensemble = Ensemble::sample_gaussian(&mean, &cov, samples, key.derive(case + 1))?;
        let obs = ObservationModel::linear(h.clone(), 1.0)?;
        let k = constant_gain(&ensemble, obs.map())?.evaluate(mean.as_view());
        let expected = &cov * h.transpose();
        worst = worst.max((k - &expected).norm() / expected.norm());
    }
    Ok(Check::new(
        "gain identity",
        vec![Statistic::new("max relative Frobenius error", worst, 0.02)],
        started,
    ))
}

/// Ensemble moments against the Gaussian reference at 10 checkpoints.
struct MomentTracker {
    worst_se: f64,
    worst_cov: f64,
}

impl MomentTracker {
    fn new() -> Self {
        Self {
            worst_se: 0.0,
            worst_cov: 0.0,
        }
    }

    fn compare(&mut self, ensemble: &Ensemble, reference: &GaussianBelief) {
        let n = ensemble.len() as f64;
        let mean = ensemble.mean();
        for i in 0..mean.len() {
            let se = (reference.cov[(i, i)] / n).sqrt();
            self.worst_se = self.worst_se.max((mean[i] - reference.mean[i]).abs() / se);
        }
        self.worst_cov = self
            .worst_cov
            .max((ensemble.covariance() - &reference.cov).norm() / reference.cov.norm());
    }

    fn statistics(&self) -> Vec<Statistic> {
        vec![
            Statistic::new("max mean error in standard errors", self.worst_se, 3.0),
            Statistic::new("max covariance relative error", self.worst_cov, 0.10),
        ]
    }
}

fn linear_setup(
    overrides: ScenarioOverrides,
    particles: usize,
    seed: u64,
) -> Result<(ScenarioModel, LinearModel, Ensemble)> {
    let (scenario, _) = build("linear-verification", Initialization::Truth, &overrides)?;
    let model = LinearModel::from_models(&scenario.dynamics[0], &scenario.observation)?;
    let ensemble = Ensemble::sample_gaussian(
        &scenario.initial_means[0],
        &scenario.initial_covariance,
        particles,
        NoiseKey::new(seed).derive(tags::INITIAL),
    )?;
    Ok((scenario, model, ensemble))
}

/// Linear FPF with a single true observation against Kalman–Bucy.
pub fn linear_kalman(particles: usize, seed: u64) -> Result<Check> {
    let started = Instant::now();
    let overrides = ScenarioOverrides {
        dt: Some(0.01),
        horizon: Some(1.0),
        clutter_count: Some(0),
        ..Default::default()
    };
    let (scenario, model, ensemble) = linear_setup(overrides, particles, seed)?;
    let truth = simulate_truth(&scenario, seed)?;
    let frames = simulate_observations(&scenario, &truth, seed)?;
    let mut kb = GaussianBelief::new(scenario.initial_means[0].clone(), scenario.initial_covariance.clone())?;
    let mut state = FpfState::new(ensemble, 0.0);
    let key = NoiseKey::new(seed);
    let mut tracker = MomentTracker::new();
    let checkpoint = (frames.len() / 10).max(1);
    for (k, frame) in frames.iter().enumerate() {
        let dz = &frame.scan.groups[0][0];
        state = fpf_step(
            &state,
            &scenario.dynamics[0],
            &scenario.observation,
            dz,
            scenario.dt,
            GainMethod::Constant,
            key,
        )?;
        kb = kalman_bucy_step(&kb, &model, dz, scenario.dt)?;
        if (k + 1) % checkpoint == 0 {
            tracker.compare(&state.ensemble, &kb);
        }
    }
    Ok(Check::new(
        "linear FPF against Kalman-Bucy",
        tracker.statistics(),
        started,
    ))
}

/// Prescribed association weights at time `t`.
pub fn beta_schedule(t: f64) -> AssociationBelief {
    let wave = 0.2 * (2.0 * std::f64::consts::PI * t).sin();
    AssociationBelief::new(DVector::from_vec(vec![0.1, 0.6 + wave, 0.3 - wave])).expect("valid schedule")
}

/// Linear PDA-FPF with two observations and scheduled `β` against the
/// association-weighted moment equations.
pub fn moment_oracle(particles: usize, seed: u64) -> Result<Check> {
    let started = Instant::now();
    let overrides = ScenarioOverrides {
        dt: Some(0.01),
        horizon: Some(1.0),
        ..Default::default()
    };
    let (scenario, model, mut ensemble) = linear_setup(overrides, particles, seed)?;
    let truth = simulate_truth(&scenario, seed)?;
    let frames = simulate_observations(&scenario, &truth, seed)?;
    let mut oracle = GaussianBelief::new(scenario.initial_means[0].clone(), scenario.initial_covariance.clone())?;
    let key = NoiseKey::new(seed);
    let mut tracker = MomentTracker::new();
    let checkpoint = (frames.len() / 10).max(1);
    for (k, frame) in frames.iter().enumerate() {
        let beta = beta_schedule(k as f64 * scenario.dt);
        let dz = &frame.scan.groups[0];
        let xi = particle_noise(key, k as u64, ensemble.dim(), ensemble.len());
        ensemble = linear_pda_fpf_step(&ensemble, &model, &beta, dz, scenario.dt, &xi)?;
        oracle = moment_oracle_step(&oracle, &model, &beta, dz, scenario.dt)?;
        if (k + 1) % checkpoint == 0 {
            tracker.compare(&ensemble, &oracle);
        }
    }
    Ok(Check::new(
        "linear PDA-FPF against the moment equations",
        tracker.statistics(),
        started,
    ))
}

fn dirichlet(rng: &mut impl Rng, k: usize) -> DVector<f64> {
    let w = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(Exp1).max(1e-300));
    let sum = w.sum();
    w / sum
}

/// Randomized steps of both single-target association filters: the raw
/// continuous increments must keep `β` on the simplex and the discrete
/// update must come out normalized.
pub fn beta_simplex(steps: usize, seed: u64) -> Result<Check> {
    let started = Instant::now();
    let key = NoiseKey::new(seed).derive(0x7369_6d70);
    let chunks = 64usize;
    let per_chunk = steps.div_ceil(chunks);
    let results: Vec<[f64; 5]> = (0..chunks as u64)
        .into_par_iter()
        .map(|c| -> Result<[f64; 5]> {
            let mut rng = key.rng(c, 0);
            let mut out = [0.0f64; 5];
            for _ in 0..per_chunk {
                let m = rng.random_range(1..=5usize);
                let s = rng.random_range(1..=2usize);
                let belief = AssociationBelief::normalized(dirichlet(&mut rng, m + 1));
                let dt = 10f64.powf(rng.random_range(-5.0..-3.0));
                let q = rng.random_range(0.0..20.0);
                let dir = DVector::from_fn(s, |_, _| normal(&mut rng));
                let h_hat = dir.normalize() * rng.random_range(0.0..1.0);
                let source = rng.random_range(0..=m);
                let dz: Vec<DVector<f64>> = (1..=m)
                    .map(|j| {
                        let noise = DVector::from_fn(s, |_, _| normal(&mut rng)) * dt.sqrt();
                        if j == source {
                            noise + &h_hat * dt
                        } else {
                            noise
                        }
                    })
                    .collect();
                let raw = belief.values() + beta_increment_continuous(&belief, &h_hat, &dz, q, dt)?;
                out[0] = out[0].max((raw.sum() - 1.0).abs());
                out[1] = out[1].max(-raw.min());
                out[2] = out[2].max(raw.max() - 1.0);

                // Discrete: a small random ensemble around the prediction.
                let sigma = rng.random_range(0.1..2.0);
                let obs = ObservationModel::linear(DMatrix::identity(s, s), sigma)?;
                let n = 8;
                let particles = DMatrix::from_fn(s, n, |i, _| h_hat[i] * sigma + normal(&mut rng) * 0.3);
                let preds = Predictions::compute(&Ensemble::new(particles)?, &obs)?;
                let clutter = if rng.random_bool(0.5) {
                    ClutterDensity::Gaussian
                } else {
                    ClutterDensity::Uniform {
                        volume: rng.random_range(0.1..100.0),
                    }
                };
                let next = beta_step_discrete_from(&belief, &preds, 0..s, &dz, q, dt, clutter)?.belief;
                out[3] = out[3].max((next.values().sum() - 1.0).abs());
                out[4] = out[4].max(next.values().iter().map(|b| (-b).max(b - 1.0)).fold(0.0, f64::max));
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let worst = |i: usize| results.iter().map(|r| r[i]).fold(0.0, f64::max);
    Ok(Check::new(
        "association simplex",
        vec![
            Statistic::new("continuous |sum - 1| before renormalizing", worst(0), 1e-9),
            Statistic::new("continuous distance below 0 before clamping", worst(1), 1e-9),
            Statistic::new("continuous distance above 1 before clamping", worst(2), 1e-9),
            Statistic::new("discrete |sum - 1|", worst(3), 1e-12),
            Statistic::new("discrete distance outside [0, 1]", worst(4), 0.0),
        ],
        started,
    ))
}

/// Continuous and discrete association filters run on the same ensemble
/// path; worst over time of the seed-averaged largest component gap.
pub fn beta_agreement(seeds: usize, particles: usize, seed: u64) -> Result<Check> {
    let started = Instant::now();
    let overrides = ScenarioOverrides {
        dt: Some(1e-3),
        horizon: Some(1.0),
        ..Default::default()
    };
    let gaps: Vec<Vec<f64>> = (0..seeds as u64)
        .into_par_iter()
        .map(|k| -> Result<Vec<f64>> {
            let run_seed = seed + k;
            let (scenario, _, ensemble) = linear_setup(overrides.clone(), particles, run_seed)?;
            let obs = &scenario.observation;
            let truth = simulate_truth(&scenario, run_seed)?;
            let frames = simulate_observations(&scenario, &truth, run_seed)?;
            let m = scenario.observations_per_step();
            let config = PdaConfig {
                gain: GainMethod::Constant,
                beta_filter: BetaFilter::Continuous,
                q: scenario.q,
            };
            let key = NoiseKey::new(run_seed);
            let mut state = PdaFpfState::new(ensemble, obs, m, 0.0)?;
            let mut discrete = AssociationBelief::uniform(m)?;
            let mut gaps = Vec::with_capacity(frames.len());
            for frame in &frames {
                let preds = Predictions::compute(&state.ensemble, obs)?;
                let scaled: Vec<DVector<f64>> = frame.scan.groups[0].iter().map(|z| z / obs.noise_scale()).collect();
                discrete = beta_step_discrete_from(
                    &discrete,
                    &preds,
                    0..1,
                    &scaled,
                    scenario.q,
                    scenario.dt,
                    ClutterDensity::Gaussian,
                )?
                .belief;
                state = pda_fpf_step(
                    &state,
                    &scenario.dynamics[0],
                    obs,
                    &frame.scan,
                    scenario.dt,
                    &config,
                    key,
                )?;
                gaps.push((state.beliefs[0].values() - discrete.values()).amax());
            }
            Ok(gaps)
        })
        .collect::<Result<_>>()?;
    let steps = gaps[0].len();
    let worst = (0..steps)
        .map(|k| gaps.iter().map(|g| g[k]).sum::<f64>() / seeds as f64)
        .fold(0.0, f64::max);
    Ok(Check::new(
        "continuous and discrete association agree",
        vec![Statistic::new("max over time of mean |beta_c - beta_d|", worst, 0.05)],
        started,
    ))
}

/// 1-d nonlinear model used for the grid comparison.
pub fn nonlinear_scenario() -> Result<ScenarioModel> {
    let drift = FnDrift::new(1, |x: nalgebra::DVectorView<'_, f64>, _t: f64| {
        DVector::from_element(1, -x[0])
    });
    let map = FnMap::new(1, |x: nalgebra::DVectorView<'_, f64>| {
        DVector::from_element(1, x[0] + 0.3 * x[0].powi(3))
    });
    Ok(ScenarioModel {
        name: "cubic-sensor".into(),
        dynamics: vec![DynamicsModel::new(Arc::new(drift), DVector::from_element(1, 0.5))?],
        observation: ObservationModel::new(Arc::new(map), 0.5)?,
        clutter: ClutterModel {
            kind: ClutterKind::GaussianWhiteNoise,
            count: 1,
        },
        horizon: 0.5,
        dt: 0.002,
        q: 10.0,
        initial_truth: vec![DVector::from_element(1, 0.8)],
        initial_means: vec![DVector::from_element(1, 0.5)],
        initial_covariance: DMatrix::from_element(1, 1, 0.25),
        truth_motion: TruthMotion::Diffusion,
        association: AssociationProcess::Markov,
        position_indices: vec![0],
        velocity_indices: vec![],
    })
}

/// PDA-FPF against the grid solution of the association-weighted
/// Kushner–Stratonovich equation, both driven by the same `β` path (the
/// continuous filter evaluated with the grid's `ĥ`).
pub fn grid_consistency(particles: usize, cells: usize, seed: u64) -> Result<Check> {
    let started = Instant::now();
    let scenario = nonlinear_scenario()?;
    let obs = &scenario.observation;
    let dynamics = &scenario.dynamics[0];
    let truth = simulate_truth(&scenario, seed)?;
    let frames = simulate_observations(&scenario, &truth, seed)?;
    let (mean0, var0) = (scenario.initial_means[0][0], scenario.initial_covariance[(0, 0)]);
    let mut density = GridDensity::gaussian(Grid::new(-4.0, 4.0, cells)?, mean0, var0)?;
    let ensemble = Ensemble::sample_gaussian(
        &scenario.initial_means[0],
        &scenario.initial_covariance,
        particles,
        NoiseKey::new(seed).derive(tags::INITIAL),
    )?;
    let m = scenario.observations_per_step();
    let config = PdaConfig {
        gain: GainMethod::Constant,
        beta_filter: BetaFilter::Fixed,
        q: scenario.q,
    };
    let key = NoiseKey::new(seed);
    let mut state = PdaFpfState::new(ensemble, obs, m, 0.0)?;
    let mut beta = AssociationBelief::uniform(m)?;
    let mut max_clipped: f64 = 0.0;
    let sigma = obs.noise_scale();
    for (k, frame) in frames.iter().enumerate() {
        let t = k as f64 * scenario.dt;
        let dz = &frame.scan.groups[0];
        state.beliefs = vec![beta.clone()];
        state = pda_fpf_step(&state, dynamics, obs, &frame.scan, scenario.dt, &config, key)?;
        let h_hat = density.expectation(|x| {
            obs.eval(DVector::from_element(1, x).as_view())
                .map_or(f64::NAN, |h| h[0])
        });
        let step = ks_step(&density, dynamics, obs, &beta, dz, t, scenario.dt)?;
        max_clipped = max_clipped.max(step.clipped_mass);
        density = step.density;
        let scaled: Vec<DVector<f64>> = dz.iter().map(|z| z / sigma).collect();
        beta = beta_step_continuous(
            &beta,
            &DVector::from_element(1, h_hat / sigma),
            &scaled,
            scenario.q,
            scenario.dt,
        )?;
    }
    let distance = distribution_distance(&density, &state.ensemble)?;
    Ok(Check::new(
        "PDA-FPF against the grid oracle",
        vec![
            Statistic::new("L1 distance between CDFs at T", distance, 0.1),
            Statistic::new("largest clipped mass per step", max_clipped, 1e-4),
        ],
        started,
    ))
}

/// General joint filter against the two-target form, and marginal sums.
pub fn jpda_reductions(cases: usize, seed: u64) -> Result<Check> {
    let started = Instant::now();
    let mut rng = NoiseKey::new(seed).derive(0x6a70_6461).rng(0, 0);
    let mut worst_reduction: f64 = 0.0;
    let mut worst_rows: f64 = 0.0;
    for _ in 0..cases {
        let s = rng.random_range(1..=3usize);
        let p1 = rng.random_range(0.0..1.0);
        let joint = JointBelief::new(2, DVector::from_vec(vec![p1, 1.0 - p1]))?;
        let dt: f64 = rng.random_range(1e-4..1e-2);
        let mut vec_s = |scale: f64| DVector::from_fn(s, |_, _| normal(&mut rng) * scale);
        let h = [vec_s(3.0), vec_s(3.0)];
        let dz = [vec_s(dt.sqrt()) + &h[0] * dt, vec_s(dt.sqrt()) + &h[1] * dt];
        let q = rng.random_range(0.0..20.0);
        let general = joint_pi_step_general(&joint, &h, &dz, q, dt)?;
        let reduced = joint_pi_step_two_target(&joint, &h[0], &h[1], &dz[0], &dz[1], q, dt)?;
        worst_reduction = worst_reduction.max((general.values() - reduced.values()).amax());

        let m = rng.random_range(2..=5usize);
        let size = permutations(m)?.len();
        let marg = marginalize_beta(&JointBelief::new(m, dirichlet(&mut rng, size))?);
        for i in 0..m {
            let row: f64 = (0..m).map(|n| marg.get(i, n)).sum();
            let col: f64 = (0..m).map(|n| marg.get(n, i)).sum();
            worst_rows = worst_rows.max((row - 1.0).abs()).max((col - 1.0).abs());
        }
    }
    Ok(Check::new(
        "joint association reductions",
        vec![
            Statistic::new("general vs two-target max difference", worst_reduction, 1e-10),
            Statistic::new("marginal row/column sum error", worst_rows, 1e-9),
        ],
        started,
    ))
}
