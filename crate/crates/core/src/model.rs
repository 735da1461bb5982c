//! Signal, observation and clutter models, and the scenario simulator.
//!
//! Targets follow `dX = a(X) dt + σ_B dB`, discretized by Euler–Maruyama.
//! Each sensor group reports `M` observation increments per step; slot `m`
//! either carries `h(X) dt + σ_W √dt ξ` for one target or a clutter return.
//! Which slot carries which target is the hidden association, simulated as a
//! jump Markov chain with rate `q` to every other arrangement.

use std::f64::consts::PI;
use std::fmt;
use std::ops::Range;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::noise::{tags, NoiseKey};

/// Drift `a(x, t)` of the signal process.
pub trait Drift: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;
    fn eval(&self, x: DVectorView<'_, f64>, t: f64) -> DVector<f64>;

    /// The matrix `A` when `a(x) = A x`.
    fn as_linear(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// `a(x) = A x`.
#[derive(Debug, Clone)]
pub struct LinearDrift {
    pub matrix: DMatrix<f64>,
}

impl Drift for LinearDrift {
    fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: DVectorView<'_, f64>, _t: f64) -> DVector<f64> {
        &self.matrix * x
    }

    fn as_linear(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

/// Drift given by a closure.
pub struct FnDrift<F> {
    dim: usize,
    f: F,
}

impl<F> FnDrift<F>
where
    F: Fn(DVectorView<'_, f64>, f64) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F> fmt::Debug for FnDrift<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnDrift")
            .field("dim", &self.dim)
            .finish_non_exhaustive()
    }
}

impl<F> Drift for FnDrift<F>
where
    F: Fn(DVectorView<'_, f64>, f64) -> DVector<f64> + Send + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, x: DVectorView<'_, f64>, t: f64) -> DVector<f64> {
        (self.f)(x, t)
    }
}

/// Signal dynamics: drift plus per-coordinate diffusion amplitudes `σ_B`.
#[derive(Debug, Clone)]
pub struct DynamicsModel {
    drift: Arc<dyn Drift>,
    diffusion: DVector<f64>,
}

impl DynamicsModel {
    pub fn new(drift: Arc<dyn Drift>, diffusion: DVector<f64>) -> Result<Self> {
        let d = drift.dim();
        if d == 0 {
            return Err(Error::InvalidModel("state dimension must be ≥ 1".into()));
        }
        if diffusion.len() != d {
            return Err(Error::Dimension {
                expected: d,
                got: diffusion.len(),
                context: "diffusion scale",
            });
        }
        if diffusion.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidModel("diffusion scales must be finite and ≥ 0".into()));
        }
        Ok(Self { drift, diffusion })
    }

    pub fn linear(matrix: DMatrix<f64>, diffusion: DVector<f64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::InvalidModel("drift matrix must be square".into()));
        }
        Self::new(Arc::new(LinearDrift { matrix }), diffusion)
    }

    /// White-noise acceleration in `spatial_dims` dimensions; the state is
    /// ordered `(x₁, v₁, x₂, v₂, …)` and `velocity_noise[k]` drives `v_k`.
    pub fn white_noise_acceleration(spatial_dims: usize, velocity_noise: &[f64]) -> Result<Self> {
        if velocity_noise.len() != spatial_dims {
            return Err(Error::Dimension {
                expected: spatial_dims,
                got: velocity_noise.len(),
                context: "velocity noise",
            });
        }
        let d = 2 * spatial_dims;
        let mut a = DMatrix::zeros(d, d);
        let mut sigma = DVector::zeros(d);
        for k in 0..spatial_dims {
            a[(2 * k, 2 * k + 1)] = 1.0;
            sigma[2 * k + 1] = velocity_noise[k];
        }
        Self::linear(a, sigma)
    }

    pub fn dim(&self) -> usize {
        self.diffusion.len()
    }

    pub fn diffusion(&self) -> &DVector<f64> {
        &self.diffusion
    }

    pub fn drift(&self) -> &Arc<dyn Drift> {
        &self.drift
    }

    /// `a(x, t)`, failing with context when the drift is not finite.
    pub fn drift_at(&self, x: DVectorView<'_, f64>, t: f64) -> Result<DVector<f64>> {
        let a = self.drift.eval(x, t);
        if a.iter().all(|v| v.is_finite()) {
            Ok(a)
        } else {
            Err(Error::NonFiniteDrift {
                time: t,
                state: x.iter().copied().collect(),
            })
        }
    }

    /// One Euler–Maruyama step driven by the standard normal vector `xi`.
    pub fn propagate(
        &self,
        x: DVectorView<'_, f64>,
        t: f64,
        dt: f64,
        xi: DVectorView<'_, f64>,
    ) -> Result<DVector<f64>> {
        let a = self.drift_at(x, t)?;
        let sq = dt.sqrt();
        Ok(DVector::from_fn(self.dim(), |r, _| {
            x[r] + a[r] * dt + self.diffusion[r] * sq * xi[r]
        }))
    }
}

/// The noiseless observation map `h`.
pub trait ObservationMap: Send + Sync + fmt::Debug {
    fn dim_obs(&self) -> usize;

    fn eval(&self, x: DVectorView<'_, f64>) -> Result<DVector<f64>>;

    /// Circumference of the circle coordinate `coord` lives on, for
    /// angle-valued coordinates.
    fn period(&self, _coord: usize) -> Option<f64> {
        None
    }

    /// Coordinate blocks whose observations are associated independently
    /// (one block per sensor). Defaults to a single block.
    #[allow(clippy::single_range_in_vec_init)]
    fn sensor_groups(&self) -> Vec<Range<usize>> {
        vec![0..self.dim_obs()]
    }

    /// The matrix `H` when `h(x) = H x`.
    fn as_linear(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

/// `h(x) = H x`.
#[derive(Debug, Clone)]
pub struct LinearMap {
    pub matrix: DMatrix<f64>,
}

impl ObservationMap for LinearMap {
    fn dim_obs(&self) -> usize {
        self.matrix.nrows()
    }

    fn eval(&self, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        if x.len() != self.matrix.ncols() {
            return Err(Error::Dimension {
                expected: self.matrix.ncols(),
                got: x.len(),
                context: "linear observation",
            });
        }
        Ok(&self.matrix * x)
    }

    fn as_linear(&self) -> Option<&DMatrix<f64>> {
        Some(&self.matrix)
    }
}

/// Bearings from fixed sensors to a planar position, one sensor per
/// observation coordinate and one association group per sensor. Uses the
/// four-quadrant arctangent, values in `(-π, π]`.
#[derive(Debug, Clone)]
pub struct BearingMap {
    sensors: Vec<[f64; 2]>,
    position: [usize; 2],
}

impl BearingMap {
    /// `position` gives the state indices of the planar coordinates
    /// (`[0, 2]` for the `(x₁, v₁, x₂, v₂)` layout).
    pub fn new(sensors: Vec<[f64; 2]>, position: [usize; 2]) -> Result<Self> {
        if sensors.is_empty() {
            return Err(Error::InvalidModel("bearing model needs at least one sensor".into()));
        }
        Ok(Self { sensors, position })
    }

    pub fn sensors(&self) -> &[[f64; 2]] {
        &self.sensors
    }
}

impl ObservationMap for BearingMap {
    fn dim_obs(&self) -> usize {
        self.sensors.len()
    }

    fn eval(&self, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        let (px, py) = (x[self.position[0]], x[self.position[1]]);
        let mut out = DVector::zeros(self.sensors.len());
        for (j, s) in self.sensors.iter().enumerate() {
            let (dx, dy) = (px - s[0], py - s[1]);
            if dx == 0.0 && dy == 0.0 {
                return Err(Error::BearingUndefined { sensor: j });
            }
            let mut b = dy.atan2(dx);
            if b == -PI {
                b = PI;
            }
            out[j] = b;
        }
        Ok(out)
    }

    fn period(&self, _coord: usize) -> Option<f64> {
        Some(2.0 * PI)
    }

    fn sensor_groups(&self) -> Vec<Range<usize>> {
        (0..self.sensors.len()).map(|j| j..j + 1).collect()
    }
}

/// Observation map given by a closure.
pub struct FnMap<F> {
    dim_obs: usize,
    f: F,
}

impl<F> FnMap<F>
where
    F: Fn(DVectorView<'_, f64>) -> DVector<f64> + Send + Sync,
{
    pub fn new(dim_obs: usize, f: F) -> Self {
        Self { dim_obs, f }
    }
}

impl<F> fmt::Debug for FnMap<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnMap")
            .field("dim_obs", &self.dim_obs)
            .finish_non_exhaustive()
    }
}

impl<F> ObservationMap for FnMap<F>
where
    F: Fn(DVectorView<'_, f64>) -> DVector<f64> + Send + Sync,
{
    fn dim_obs(&self) -> usize {
        self.dim_obs
    }

    fn eval(&self, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        Ok((self.f)(x))
    }
}

/// Observation map plus white-noise amplitude `σ_W`.
#[derive(Debug, Clone)]
pub struct ObservationModel {
    map: Arc<dyn ObservationMap>,
    noise_scale: f64,
}

impl ObservationModel {
    pub fn new(map: Arc<dyn ObservationMap>, noise_scale: f64) -> Result<Self> {
        if map.dim_obs() == 0 {
            return Err(Error::InvalidModel("observation dimension must be ≥ 1".into()));
        }
        if !(noise_scale.is_finite() && noise_scale > 0.0) {
            return Err(Error::InvalidModel("observation noise scale must be > 0".into()));
        }
        Ok(Self { map, noise_scale })
    }

    pub fn linear(matrix: DMatrix<f64>, noise_scale: f64) -> Result<Self> {
        Self::new(Arc::new(LinearMap { matrix }), noise_scale)
    }

    pub fn map(&self) -> &dyn ObservationMap {
        self.map.as_ref()
    }

    pub fn map_arc(&self) -> Arc<dyn ObservationMap> {
        Arc::clone(&self.map)
    }

    pub fn dim_obs(&self) -> usize {
        self.map.dim_obs()
    }

    pub fn noise_scale(&self) -> f64 {
        self.noise_scale
    }

    pub fn eval(&self, x: DVectorView<'_, f64>) -> Result<DVector<f64>> {
        self.map.eval(x)
    }

    pub fn sensor_groups(&self) -> Vec<Range<usize>> {
        self.map.sensor_groups()
    }
}

/// Bearing-only sensors observing the `(x₁, v₁, x₂, v₂)` state layout.
pub fn bearing_observation_model(sensors: &[[f64; 2]], noise_scale: f64) -> Result<ObservationModel> {
    ObservationModel::new(Arc::new(BearingMap::new(sensors.to_vec(), [0, 2])?), noise_scale)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClutterKind {
    /// Returns uniform in a ball of the given radius (observation units)
    /// around the target's noiseless observation.
    UniformDisk { radius: f64 },
    /// Pure observation noise `σ_W dW`.
    GaussianWhiteNoise,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClutterModel {
    pub kind: ClutterKind,
    /// Clutter returns per sensor group and step.
    pub count: usize,
}

impl ClutterModel {
    pub fn none() -> Self {
        Self {
            kind: ClutterKind::GaussianWhiteNoise,
            count: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let ClutterKind::UniformDisk { radius } = self.kind {
            if !(radius.is_finite() && radius > 0.0) {
                return Err(Error::InvalidModel("clutter radius must be > 0".into()));
            }
        }
        Ok(())
    }
}

/// A constant-velocity leg of a scripted trajectory, active from `start`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSegment {
    pub start: f64,
    /// Velocity of each position coordinate.
    pub velocity: Vec<f64>,
}

/// How ground truth is produced.
#[derive(Debug, Clone, PartialEq)]
pub enum TruthMotion {
    /// Simulate the signal SDE.
    Diffusion,
    /// Deterministic piecewise-constant-velocity tracks, one list of
    /// segments per target. Position and velocity coordinates are given by
    /// the scenario's index lists.
    Scripted(Vec<Vec<MotionSegment>>),
}

/// How the hidden slot arrangement evolves between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AssociationProcess {
    /// Jump chain with rate `q` to each other arrangement.
    Markov,
    /// Fresh uniform arrangement every step.
    Independent,
}

/// Everything needed to simulate one tracking problem.
#[derive(Debug, Clone)]
pub struct ScenarioModel {
    pub name: String,
    /// Dynamics per target (also used by the filters).
    pub dynamics: Vec<DynamicsModel>,
    pub observation: ObservationModel,
    pub clutter: ClutterModel,
    pub horizon: f64,
    pub dt: f64,
    /// Association transition rate.
    pub q: f64,
    pub initial_truth: Vec<DVector<f64>>,
    /// Mean of the initial particle draw, per target.
    pub initial_means: Vec<DVector<f64>>,
    pub initial_covariance: DMatrix<f64>,
    pub truth_motion: TruthMotion,
    pub association: AssociationProcess,
    pub position_indices: Vec<usize>,
    pub velocity_indices: Vec<usize>,
}

impl ScenarioModel {
    pub fn n_targets(&self) -> usize {
        self.dynamics.len()
    }

    /// Observations per sensor group and step.
    pub fn observations_per_step(&self) -> usize {
        self.n_targets() + self.clutter.count
    }

    pub fn n_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }

    pub fn state_dim(&self) -> usize {
        self.dynamics[0].dim()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n_targets();
        if n == 0 {
            return Err(Error::InvalidModel("scenario has no targets".into()));
        }
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidModel("dt must be > 0".into()));
        }
        if !(self.horizon >= self.dt * (1.0 - 1e-9)) {
            return Err(Error::InvalidModel("horizon must be ≥ dt".into()));
        }
        if !(self.q.is_finite() && self.q >= 0.0) {
            return Err(Error::InvalidModel("q must be ≥ 0".into()));
        }
        if n > 1 && self.clutter.count > 0 {
            return Err(Error::InvalidModel("multi-target scenarios are clutter-free".into()));
        }
        self.clutter.validate()?;
        let d = self.state_dim();
        for dynamics in &self.dynamics {
            if dynamics.dim() != d {
                return Err(Error::Dimension {
                    expected: d,
                    got: dynamics.dim(),
                    context: "target dynamics",
                });
            }
        }
        for (what, list) in [
            ("initial truth", &self.initial_truth),
            ("initial mean", &self.initial_means),
        ] {
            if list.len() != n {
                return Err(Error::InvalidModel(format!("{what}: expected {n} targets")));
            }
            if let Some(bad) = list.iter().find(|x| x.len() != d) {
                return Err(Error::Dimension {
                    expected: d,
                    got: bad.len(),
                    context: "initial state",
                });
            }
        }
        if self.initial_covariance.shape() != (d, d) {
            return Err(Error::Dimension {
                expected: d,
                got: self.initial_covariance.nrows(),
                context: "initial covariance",
            });
        }
        if self
            .position_indices
            .iter()
            .chain(&self.velocity_indices)
            .any(|&i| i >= d)
        {
            return Err(Error::InvalidModel("position/velocity index out of range".into()));
        }
        if let TruthMotion::Scripted(tracks) = &self.truth_motion {
            if tracks.len() != n {
                return Err(Error::InvalidModel("one scripted track per target required".into()));
            }
            if self.velocity_indices.len() != self.position_indices.len() {
                return Err(Error::InvalidModel("scripted motion needs velocity indices".into()));
            }
            for seg in tracks.iter().flatten() {
                if seg.velocity.len() != self.position_indices.len() {
                    return Err(Error::InvalidModel("segment velocity has wrong dimension".into()));
                }
            }
        }
        Ok(())
    }
}

/// Which source fed an observation slot: `Some(target)` or clutter.
pub type SlotSource = Option<usize>;

/// What the filters see: the time and the observation increments
/// `groups[g][m]` of sensor group `g`, slot `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct Scan {
    pub time: f64,
    pub groups: Vec<Vec<DVector<f64>>>,
}

impl Scan {
    /// A single-group scan.
    pub fn single(time: f64, increments: Vec<DVector<f64>>) -> Self {
        Self {
            time,
            groups: vec![increments],
        }
    }
}

/// One simulated step: the scan plus the hidden truth assignment, which is
/// kept for metrics and never passed to a filter.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationFrame {
    pub scan: Scan,
    pub truth_assignment: Vec<Vec<SlotSource>>,
}

/// Simulates the per-target truth trajectories, `n_steps + 1` states each.
pub fn simulate_truth(scenario: &ScenarioModel, seed: u64) -> Result<Vec<Vec<DVector<f64>>>> {
    scenario.validate()?;
    let n_steps = scenario.n_steps();
    let dt = scenario.dt;
    match &scenario.truth_motion {
        TruthMotion::Diffusion => {
            let key = NoiseKey::new(seed).derive(tags::TRUTH);
            scenario
                .dynamics
                .iter()
                .zip(&scenario.initial_truth)
                .enumerate()
                .map(|(target, (dynamics, x0))| {
                    let mut path = Vec::with_capacity(n_steps + 1);
                    path.push(x0.clone());
                    for k in 0..n_steps {
                        let xi = key.normal_vector(k as u64, target as u64, dynamics.dim());
                        let t = k as f64 * dt;
                        let next = dynamics.propagate(path[k].as_view(), t, dt, xi.as_view())?;
                        path.push(next);
                    }
                    Ok(path)
                })
                .collect()
        }
        TruthMotion::Scripted(tracks) => Ok(tracks
            .iter()
            .zip(&scenario.initial_truth)
            .map(|(segments, x0)| {
                (0..=n_steps)
                    .map(|k| scripted_state(x0, segments, k as f64 * dt, scenario))
                    .collect()
            })
            .collect()),
    }
}

fn scripted_state(x0: &DVector<f64>, segments: &[MotionSegment], t: f64, scenario: &ScenarioModel) -> DVector<f64> {
    let mut x = x0.clone();
    let eps = 1e-9 * scenario.dt;
    for (i, seg) in segments.iter().enumerate() {
        let end = segments.get(i + 1).map_or(f64::INFINITY, |s| s.start);
        let overlap = (t.min(end) - seg.start).max(0.0);
        for (c, &p) in scenario.position_indices.iter().enumerate() {
            x[p] += seg.velocity[c] * overlap;
        }
        if seg.start <= t + eps && t + eps < end {
            for (c, &v) in scenario.velocity_indices.iter().enumerate() {
                x[v] = seg.velocity[c];
            }
        }
    }
    x
}

/// Hidden slot arrangement of each sensor group.
#[derive(Debug, Clone)]
pub struct AssociationChain {
    slots: usize,
    targets: usize,
    process: AssociationProcess,
    q: f64,
    dt: f64,
    current: Vec<Vec<SlotSource>>,
}

impl AssociationChain {
    pub fn new(scenario: &ScenarioModel, rng: &mut ChaCha8Rng) -> Self {
        let groups = scenario.observation.sensor_groups().len();
        let mut chain = Self {
            slots: scenario.observations_per_step(),
            targets: scenario.n_targets(),
            process: scenario.association,
            q: scenario.q,
            dt: scenario.dt,
            current: Vec::new(),
        };
        chain.current = (0..groups).map(|_| chain.draw(rng)).collect();
        chain
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<SlotSource> {
        let mut order: Vec<usize> = (0..self.slots).collect();
        order.shuffle(rng);
        let mut arrangement = vec![None; self.slots];
        for (target, &slot) in order.iter().take(self.targets).enumerate() {
            arrangement[slot] = Some(target);
        }
        arrangement
    }

    fn arrangements(&self) -> f64 {
        ((self.slots - self.targets + 1)..=self.slots)
            .map(|k| k as f64)
            .product()
    }

    pub fn current(&self) -> &[Vec<SlotSource>] {
        &self.current
    }

    /// Advances every group by one step.
    pub fn advance(&mut self, rng: &mut ChaCha8Rng) {
        let others = self.arrangements() - 1.0;
        for g in 0..self.current.len() {
            let jump = match self.process {
                AssociationProcess::Independent => true,
                AssociationProcess::Markov => {
                    others >= 1.0 && rng.random::<f64>() < (others * self.q * self.dt).min(1.0)
                }
            };
            if !jump {
                continue;
            }
            match self.process {
                AssociationProcess::Independent => self.current[g] = self.draw(rng),
                AssociationProcess::Markov => loop {
                    let next = self.draw(rng);
                    if next != self.current[g] {
                        self.current[g] = next;
                        break;
                    }
                },
            }
        }
    }
}

/// Uniform sample from the ball of radius `r` in `R^dim`.
fn sample_ball(dim: usize, r: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    loop {
        let dir = DVector::<f64>::from_fn(dim, |_, _| rng.sample(StandardNormal));
        let norm = dir.norm();
        if norm > 0.0 {
            let radius = r * rng.random::<f64>().powf(1.0 / dim as f64);
            return dir * (radius / norm);
        }
    }
}

/// Builds the observation frame at `time` from the true target states and
/// the slot arrangement of every sensor group.
pub fn generate_frame(
    scenario: &ScenarioModel,
    time: f64,
    truth_states: &[DVector<f64>],
    assignment: &[Vec<SlotSource>],
    rng: &mut ChaCha8Rng,
) -> Result<ObservationFrame> {
    if truth_states.len() != scenario.n_targets() {
        return Err(Error::InvalidModel("one truth state per target required".into()));
    }
    if truth_states.iter().any(|x| x.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidModel(format!("non-finite truth state at t={time}")));
    }
    let obs = &scenario.observation;
    let groups = obs.sensor_groups();
    if assignment.len() != groups.len() {
        return Err(Error::InvalidModel("one arrangement per sensor group required".into()));
    }
    let h: Vec<DVector<f64>> = truth_states
        .iter()
        .map(|x| obs.eval(x.as_view()))
        .collect::<Result<_>>()?;
    let dt = scenario.dt;
    let noise = obs.noise_scale() * dt.sqrt();

    let mut out = Vec::with_capacity(groups.len());
    for (range, slots) in groups.iter().zip(assignment) {
        let s = range.len();
        let mut increments = Vec::with_capacity(slots.len());
        for source in slots {
            let xi = DVector::<f64>::from_fn(s, |_, _| rng.sample(StandardNormal));
            let dz = match source {
                Some(n) => h[*n].rows(range.start, s) * dt + xi * noise,
                None => match scenario.clutter.kind {
                    ClutterKind::GaussianWhiteNoise => xi * noise,
                    ClutterKind::UniformDisk { radius } => {
                        let anchor = rng.random_range(0..h.len());
                        (h[anchor].rows(range.start, s) + sample_ball(s, radius, rng)) * dt
                    }
                },
            };
            increments.push(dz);
        }
        out.push(increments);
    }
    Ok(ObservationFrame {
        scan: Scan { time, groups: out },
        truth_assignment: assignment.to_vec(),
    })
}

/// Frames `0..n_steps`; frame `k` is generated from truth state `k` and
/// drives the filter step from `t_k` to `t_{k+1}`.
pub fn simulate_observations(
    scenario: &ScenarioModel,
    truth: &[Vec<DVector<f64>>],
    seed: u64,
) -> Result<Vec<ObservationFrame>> {
    let base = NoiseKey::new(seed);
    let mut chain_rng = base.derive(tags::ASSOCIATION).rng(0, 0);
    let mut chain = AssociationChain::new(scenario, &mut chain_rng);
    let obs_key = base.derive(tags::OBSERVATION);
    (0..scenario.n_steps())
        .map(|k| {
            if k > 0 {
                chain.advance(&mut chain_rng);
            }
            let states: Vec<DVector<f64>> = truth.iter().map(|path| path[k].clone()).collect();
            let mut rng = obs_key.rng(k as u64, 0);
            generate_frame(scenario, k as f64 * scenario.dt, &states, chain.current(), &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn wna_scenario(sigma_b: &[f64], x0: [f64; 2], horizon: f64, dt: f64) -> ScenarioModel {
        ScenarioModel {
            name: "test".into(),
            dynamics: vec![DynamicsModel::white_noise_acceleration(1, &sigma_b[1..]).unwrap()],
            observation: ObservationModel::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 0.06).unwrap(),
            clutter: ClutterModel {
                kind: ClutterKind::UniformDisk { radius: 2.0 },
                count: 3,
            },
            horizon,
            dt,
            q: 10.0,
            initial_truth: vec![DVector::from_row_slice(&x0)],
            initial_means: vec![DVector::from_row_slice(&x0)],
            initial_covariance: DMatrix::from_diagonal(&DVector::from_vec(vec![0.1, 0.05])),
            truth_motion: TruthMotion::Diffusion,
            association: AssociationProcess::Markov,
            position_indices: vec![0],
            velocity_indices: vec![1],
        }
    }

    #[test]
    fn static_truth_is_constant() {
        let drift = Arc::new(FnDrift::new(1, |x: DVectorView<'_, f64>, _| DVector::zeros(x.len())));
        let mut sc = wna_scenario(&[0.0, 0.0], [0.0, 0.0], 1.0, 0.1);
        sc.dynamics = vec![DynamicsModel::new(drift, DVector::zeros(1)).unwrap()];
        sc.initial_truth = vec![DVector::from_element(1, 3.5)];
        sc.initial_means = sc.initial_truth.clone();
        sc.initial_covariance = DMatrix::identity(1, 1);
        sc.position_indices = vec![0];
        sc.velocity_indices = vec![];
        sc.observation = ObservationModel::linear(DMatrix::identity(1, 1), 1.0).unwrap();
        let path = &simulate_truth(&sc, 1).unwrap()[0];
        assert_eq!(path.len(), 11);
        assert!(path.iter().all(|x| x[0] == 3.5));
    }

    #[test]
    fn noiseless_constant_velocity() {
        let sc = wna_scenario(&[0.0, 0.0], [0.0, 6.0], 1.0, 0.01);
        let path = &simulate_truth(&sc, 9).unwrap()[0];
        assert_eq!(path.len(), 101);
        assert_relative_eq!(path[100][0], 6.0, epsilon = 1e-12);
        assert_relative_eq!(path[100][1], 6.0);
    }

    #[test]
    fn velocity_variance_follows_wiener_scaling() {
        let sc = wna_scenario(&[0.0, 1.0], [0.0, 6.0], 1.0, 0.01);
        let finals: Vec<f64> = (0..2000)
            .map(|seed| simulate_truth(&sc, seed).unwrap()[0][100][1])
            .collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = finals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (finals.len() - 1) as f64;
        // Var of a sample variance of 2000 normals: 2σ⁴/(n-1) → sd ≈ 0.032.
        assert!((var - 1.0).abs() < 0.1, "var {var}");
    }

    #[test]
    fn truth_is_reproducible() {
        let sc = wna_scenario(&[0.0, 1.0], [0.0, 6.0], 1.0, 0.01);
        assert_eq!(simulate_truth(&sc, 5).unwrap(), simulate_truth(&sc, 5).unwrap());
        assert_ne!(simulate_truth(&sc, 5).unwrap(), simulate_truth(&sc, 6).unwrap());
    }

    #[test]
    fn non_finite_drift_reports_context() {
        let drift = Arc::new(FnDrift::new(1, |x: DVectorView<'_, f64>, _| {
            DVector::from_element(1, 1.0 / (x[0] - 1.0))
        }));
        let mut sc = wna_scenario(&[0.0, 0.0], [0.0, 0.0], 0.1, 0.1);
        sc.dynamics = vec![DynamicsModel::new(drift, DVector::zeros(1)).unwrap()];
        sc.initial_truth = vec![DVector::from_element(1, 1.0)];
        sc.initial_means = sc.initial_truth.clone();
        sc.initial_covariance = DMatrix::identity(1, 1);
        sc.velocity_indices = vec![];
        sc.observation = ObservationModel::linear(DMatrix::identity(1, 1), 1.0).unwrap();
        match simulate_truth(&sc, 0) {
            Err(Error::NonFiniteDrift { time, state }) => {
                assert_eq!(time, 0.0);
                assert_eq!(state, vec![1.0]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn clutter_frame_layout() {
        let sc = wna_scenario(&[0.0, 1.0], [0.0, 6.0], 1.0, 0.01);
        let truth = vec![DVector::from_vec(vec![1.0, 6.0])];
        let mut rng = NoiseKey::new(1).rng(0, 0);
        for _ in 0..200 {
            let assignment = vec![vec![None, Some(0), None, None]];
            let f = generate_frame(&sc, 0.0, &truth, &assignment, &mut rng).unwrap();
            assert_eq!(f.scan.groups[0].len(), 4);
            for (m, dz) in f.scan.groups[0].iter().enumerate() {
                if m != 1 {
                    let y = dz[0] / sc.dt;
                    assert!((y - 1.0).abs() <= 2.0 + 1e-12, "clutter {y}");
                }
            }
        }
    }

    #[test]
    fn permuted_two_target_frame() {
        let mut sc = wna_scenario(&[0.0, 0.0], [0.0, 0.0], 1.0, 0.01);
        sc.dynamics = vec![sc.dynamics[0].clone(), sc.dynamics[0].clone()];
        sc.clutter = ClutterModel::none();
        sc.initial_truth = vec![DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![5.0, 0.0])];
        sc.initial_means = sc.initial_truth.clone();
        sc.observation = ObservationModel::linear(DMatrix::from_row_slice(1, 2, &[1.0, 0.0]), 1e-9).unwrap();
        let mut rng = NoiseKey::new(1).rng(0, 0);
        let f = generate_frame(&sc, 0.0, &sc.initial_truth, &[vec![Some(1), Some(0)]], &mut rng).unwrap();
        assert_relative_eq!(f.scan.groups[0][0][0], 5.0 * 0.01, epsilon = 1e-9);
        assert_relative_eq!(f.scan.groups[0][1][0], 1.0 * 0.01, epsilon = 1e-9);
    }

    #[test]
    fn observation_noise_variance() {
        let mut sc = wna_scenario(&[0.0, 0.0], [0.0, 0.0], 1.0, 0.01);
        sc.clutter = ClutterModel::none();
        let truth = vec![DVector::from_vec(vec![0.0, 0.0])];
        let mut rng = NoiseKey::new(8).rng(0, 0);
        let n = 20_000;
        let samples: Vec<f64> = (0..n)
            .map(|_| {
                generate_frame(&sc, 0.0, &truth, &[vec![Some(0)]], &mut rng)
                    .unwrap()
                    .scan
                    .groups[0][0][0]
            })
            .collect();
        let var = samples.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let expected = 0.06f64.powi(2) * 0.01;
        let se = expected * (2.0 / n as f64).sqrt();
        assert!((var - expected).abs() < 3.0 * se, "var {var} vs {expected}");
    }

    #[test]
    fn bearings() {
        let b = BearingMap::new(vec![[0.0, 0.0]], [0, 1]).unwrap();
        let at = |x: f64, y: f64| b.eval(DVector::from_vec(vec![x, y]).as_view());
        assert_relative_eq!(at(0.0, 5.0).unwrap()[0], PI / 2.0);
        assert_relative_eq!(at(-1.0, 0.0).unwrap()[0], PI);
        assert_relative_eq!(at(1.0, 1.0).unwrap()[0], PI / 4.0);
        assert!(matches!(at(0.0, 0.0), Err(Error::BearingUndefined { sensor: 0 })));
        assert!(BearingMap::new(vec![], [0, 1]).is_err());
    }

    #[test]
    fn two_sensor_bearings_per_target() {
        let obs = bearing_observation_model(&[[-20.0, -10.0], [20.0, -10.0]], 0.01).unwrap();
        assert_eq!(obs.dim_obs(), 2);
        assert_eq!(obs.sensor_groups(), vec![0..1, 1..2]);
        for x in [[-20.0, 0.0, 50.0, -5.0], [20.0, 0.0, 50.0, -5.0]] {
            let h = obs.eval(DVector::from_row_slice(&x).as_view()).unwrap();
            assert_eq!(h.len(), 2);
        }
        let h = obs
            .eval(DVector::from_row_slice(&[-20.0, 0.0, 50.0, 0.0]).as_view())
            .unwrap();
        assert_relative_eq!(h[0], PI / 2.0);
    }

    #[test]
    fn markov_chain_switch_rate() {
        let mut sc = wna_scenario(&[0.0, 0.0], [0.0, 0.0], 1.0, 0.01);
        sc.clutter.count = 1;
        let mut rng = NoiseKey::new(4).rng(0, 0);
        let mut chain = AssociationChain::new(&sc, &mut rng);
        let mut switches = 0;
        let steps = 20_000;
        for _ in 0..steps {
            let before = chain.current()[0].clone();
            chain.advance(&mut rng);
            if chain.current()[0] != before {
                switches += 1;
            }
        }
        let rate = switches as f64 / steps as f64;
        assert!((rate - 0.1).abs() < 0.01, "rate {rate}");
    }
}
