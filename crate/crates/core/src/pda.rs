//! Single-target association filters and the PDA-FPF step.
//!
//! `βᵐ` is the probability that observation `m` came from the target and
//! `β⁰` that all observations are clutter. The continuous filter is the
//! Euler step of
//!
//! ```text
//! dβᵐ = q[1 − (M+1)βᵐ] dt + βᵐ ĥᵀ(dZᵐ − Σⱼ βʲ dZʲ) + βᵐ |ĥ|² (Σⱼ (βʲ)² − βᵐ) dt
//! dβ⁰ = q[1 − (M+1)β⁰] dt − β⁰ ĥᵀ Σⱼ βʲ dZʲ + β⁰ |ĥ|² Σⱼ (βʲ)² dt
//! ```
//!
//! whose increments sum to zero. The particle update attenuates each
//! observation's control by its `βᵐ`.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fpf::{controlled_update, particle_noise, Channel, Predictions};
use crate::gain::GainMethod;
use crate::model::{DynamicsModel, ObservationModel, Scan};
use crate::noise::NoiseKey;

/// Association probabilities `(β⁰, β¹, …, βᴹ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AssociationBelief {
    beta: DVector<f64>,
}

impl AssociationBelief {
    /// Validates `values` (length `M + 1`, entries in `[0, 1]`, sum 1).
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidModel("belief needs M ≥ 1".into()));
        }
        if values.iter().any(|b| !(0.0..=1.0).contains(b)) {
            return Err(Error::InvalidModel(format!(
                "belief entries outside [0, 1]: {values:?}"
            )));
        }
        if (values.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel(format!("belief sums to {}", values.sum())));
        }
        Ok(Self { beta: values })
    }

    pub fn uniform(m: usize) -> Result<Self> {
        if m == 0 {
            return Err(Error::InvalidModel("belief needs M ≥ 1".into()));
        }
        Ok(Self {
            beta: DVector::from_element(m + 1, 1.0 / (m + 1) as f64),
        })
    }

    /// Clamps to `[0, 1]` and divides by the sum.
    pub fn normalized(raw: DVector<f64>) -> Self {
        let mut beta = raw.map(|b| if b.is_nan() { 0.0 } else { b.clamp(0.0, 1.0) });
        let sum = beta.sum();
        if sum > 0.0 {
            beta /= sum;
        } else {
            beta.fill(1.0 / beta.len() as f64);
        }
        Self { beta }
    }

    /// Number of observations `M`.
    pub fn m(&self) -> usize {
        self.beta.len() - 1
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.beta
    }

    pub fn get(&self, m: usize) -> f64 {
        self.beta[m]
    }
}

/// Uniform initial belief `1/(M+1)`.
pub fn beta_init(m: usize) -> Result<AssociationBelief> {
    AssociationBelief::uniform(m)
}

fn check_increments(belief: &AssociationBelief, h_hat: &DVector<f64>, dz: &[DVector<f64>]) -> Result<()> {
    if dz.len() != belief.m() {
        return Err(Error::Dimension {
            expected: belief.m(),
            got: dz.len(),
            context: "observations per step",
        });
    }
    if let Some(bad) = dz.iter().find(|z| z.len() != h_hat.len()) {
        return Err(Error::Dimension {
            expected: h_hat.len(),
            got: bad.len(),
            context: "observation increment",
        });
    }
    Ok(())
}

/// Raw Euler increments of the continuous filter (no clamping). `dz` and
/// `h_hat` are in standard-noise units.
pub fn beta_increment_continuous(
    belief: &AssociationBelief,
    h_hat: &DVector<f64>,
    dz: &[DVector<f64>],
    q: f64,
    dt: f64,
) -> Result<DVector<f64>> {
    check_increments(belief, h_hat, dz)?;
    let m_count = belief.m();
    let beta = belief.values();
    let h2 = h_hat.norm_squared();
    let weighted: f64 = (1..=m_count).map(|j| beta[j] * h_hat.dot(&dz[j - 1])).sum();
    let sq: f64 = (1..=m_count).map(|j| beta[j] * beta[j]).sum();
    let relax = |b: f64| q * (1.0 - (m_count + 1) as f64 * b) * dt;
    let mut out = DVector::zeros(m_count + 1);
    out[0] = relax(beta[0]) - beta[0] * weighted + beta[0] * h2 * sq * dt;
    for m in 1..=m_count {
        out[m] = relax(beta[m]) + beta[m] * (h_hat.dot(&dz[m - 1]) - weighted) + beta[m] * h2 * (sq - beta[m]) * dt;
    }
    Ok(out)
}

/// Continuous-time filter step, clamped and renormalized.
pub fn beta_step_continuous(
    belief: &AssociationBelief,
    h_hat: &DVector<f64>,
    dz: &[DVector<f64>],
    q: f64,
    dt: f64,
) -> Result<AssociationBelief> {
    let inc = beta_increment_continuous(belief, h_hat, dz, q, dt)?;
    Ok(AssociationBelief::normalized(belief.values() + inc))
}

/// Density assumed for clutter returns in the discrete filter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClutterDensity {
    /// Pure observation noise: `dZ ~ N(0, dt)` in standard-noise units.
    Gaussian,
    /// Rates `dZ/dt` uniform over a region of the given volume, in raw
    /// observation units.
    Uniform { volume: f64 },
}

impl ClutterDensity {
    /// Log density of a standard-noise increment `dz` of dimension `s`.
    /// `scale` is `σ_W`.
    pub fn log_density(&self, dz: &DVector<f64>, dt: f64, scale: f64) -> f64 {
        let s = dz.len() as f64;
        match self {
            ClutterDensity::Gaussian => {
                -0.5 * s * (2.0 * std::f64::consts::PI * dt).ln() - dz.norm_squared() / (2.0 * dt)
            }
            ClutterDensity::Uniform { volume } => -(volume.ln() + s * dt.ln() - s * scale.ln()),
        }
    }
}

/// Log of the particle-averaged target likelihood of `dz` (standard-noise
/// units) on coordinates `range`.
pub(crate) fn log_target_likelihood(preds: &Predictions, range: Range<usize>, dz: &DVector<f64>, dt: f64) -> f64 {
    let n = preds.len();
    let s = range.len() as f64;
    let logs: Vec<f64> = (0..n)
        .map(|i| -preds.residual(i, range.clone(), dz.as_view(), dt).norm_squared() / (2.0 * dt))
        .collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mean = logs.iter().map(|l| (l - max).exp()).sum::<f64>() / n as f64;
    max + mean.ln() - 0.5 * s * (2.0 * std::f64::consts::PI * dt).ln()
}

/// Normalizes log weights; `None` if no weight is finite.
pub(crate) fn normalize_log(logs: &[f64]) -> Option<DVector<f64>> {
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return None;
    }
    let w = DVector::from_iterator(logs.len(), logs.iter().map(|l| (l - max).exp()));
    let sum = w.sum();
    Some(w / sum)
}

/// Result of a discrete Bayes update.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteUpdate {
    pub belief: AssociationBelief,
    /// Set when every likelihood vanished and the prior was kept.
    pub fallback: bool,
}

/// Discrete-time Bayes update from scaled predictions. The prior is the
/// belief advanced by the association chain over `dt`.
pub fn beta_step_discrete_from(
    belief: &AssociationBelief,
    preds: &Predictions,
    range: Range<usize>,
    dz: &[DVector<f64>],
    q: f64,
    dt: f64,
    clutter: ClutterDensity,
) -> Result<DiscreteUpdate> {
    let m_count = belief.m();
    if dz.len() != m_count {
        return Err(Error::Dimension {
            expected: m_count,
            got: dz.len(),
            context: "observations per step",
        });
    }
    let prior = AssociationBelief::normalized(belief.values().map(|b| b + q * (1.0 - (m_count + 1) as f64 * b) * dt));
    // Relative to the all-clutter hypothesis only slot m's density changes.
    let mut logs = Vec::with_capacity(m_count + 1);
    logs.push(prior.get(0).ln());
    for m in 1..=m_count {
        let z = &dz[m - 1];
        let ratio = log_target_likelihood(preds, range.clone(), z, dt)
            - clutter.log_density(&preds.unwrapped(range.clone(), z.as_view(), dt), dt, preds.scale);
        logs.push(prior.get(m).ln() + ratio);
    }
    Ok(match normalize_log(&logs) {
        Some(beta) => DiscreteUpdate {
            belief: AssociationBelief::normalized(beta),
            fallback: false,
        },
        None => DiscreteUpdate {
            belief: prior,
            fallback: true,
        },
    })
}

/// Discrete-time Bayes update for a single-group observation model; `dz`
/// in raw observation units.
pub fn beta_step_discrete(
    belief: &AssociationBelief,
    ensemble: &Ensemble,
    obs: &ObservationModel,
    dz: &[DVector<f64>],
    q: f64,
    dt: f64,
    clutter: ClutterDensity,
) -> Result<DiscreteUpdate> {
    let preds = Predictions::compute(ensemble, obs)?;
    let scaled: Vec<DVector<f64>> = dz.iter().map(|z| z / obs.noise_scale()).collect();
    beta_step_discrete_from(belief, &preds, 0..obs.dim_obs(), &scaled, q, dt, clutter)
}

/// Which association filter advances `β`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaFilter {
    Continuous,
    Discrete(ClutterDensity),
    /// Keep `β` unchanged.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdaConfig {
    pub gain: GainMethod,
    pub beta_filter: BetaFilter,
    pub q: f64,
}

/// PDA-FPF state: ensemble plus one belief per sensor group.
#[derive(Debug, Clone, PartialEq)]
pub struct PdaFpfState {
    pub ensemble: Ensemble,
    pub beliefs: Vec<AssociationBelief>,
    pub time: f64,
    pub step: u64,
    /// Discrete updates that fell back to the prior.
    pub fallbacks: u64,
}

impl PdaFpfState {
    /// Uniform beliefs for every sensor group of `obs`.
    pub fn new(ensemble: Ensemble, obs: &ObservationModel, m: usize, time: f64) -> Result<Self> {
        let beliefs = obs
            .sensor_groups()
            .iter()
            .map(|_| beta_init(m))
            .collect::<Result<_>>()?;
        Ok(Self {
            ensemble,
            beliefs,
            time,
            step: 0,
            fallbacks: 0,
        })
    }
}

/// Scales a raw scan by `1/σ_W`.
pub(crate) fn scaled_scan(
    scan: &Scan,
    obs: &ObservationModel,
    groups: &[Range<usize>],
    m: usize,
) -> Result<Vec<Vec<DVector<f64>>>> {
    if scan.groups.len() != groups.len() {
        return Err(Error::Dimension {
            expected: groups.len(),
            got: scan.groups.len(),
            context: "sensor groups in scan",
        });
    }
    let sigma = obs.noise_scale();
    scan.groups
        .iter()
        .zip(groups)
        .map(|(slots, range)| {
            if slots.len() != m {
                return Err(Error::Dimension {
                    expected: m,
                    got: slots.len(),
                    context: "observations per step",
                });
            }
            slots
                .iter()
                .map(|z| {
                    if z.len() != range.len() {
                        Err(Error::Dimension {
                            expected: range.len(),
                            got: z.len(),
                            context: "observation increment",
                        })
                    } else {
                        Ok(z / sigma)
                    }
                })
                .collect()
        })
        .collect()
}

/// One PDA-FPF step. `ĥ`, the gain and `β` are taken from the state before
/// the step; the belief is advanced after the particles move.
pub fn pda_fpf_step(
    state: &PdaFpfState,
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    scan: &Scan,
    dt: f64,
    config: &PdaConfig,
    key: NoiseKey,
) -> Result<PdaFpfState> {
    let xi = particle_noise(key, state.step, state.ensemble.dim(), state.ensemble.len());
    pda_fpf_step_with_noise(state, dynamics, obs, scan, dt, config, &xi)
}

pub fn pda_fpf_step_with_noise(
    state: &PdaFpfState,
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    scan: &Scan,
    dt: f64,
    config: &PdaConfig,
    xi: &DMatrix<f64>,
) -> Result<PdaFpfState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidModel("dt must be > 0".into()));
    }
    let groups = obs.sensor_groups();
    if state.beliefs.len() != groups.len() {
        return Err(Error::Dimension {
            expected: groups.len(),
            got: state.beliefs.len(),
            context: "beliefs per sensor group",
        });
    }
    let m = state.beliefs[0].m();
    let dz = scaled_scan(scan, obs, &groups, m)?;
    let preds = Predictions::compute(&state.ensemble, obs)?;
    let gain = config.gain.compute(&state.ensemble, &preds.deviations)?;

    let mut channels = Vec::new();
    for ((range, belief), slots) in groups.iter().zip(&state.beliefs).zip(&dz) {
        for (k, z) in slots.iter().enumerate() {
            channels.push(Channel {
                range: range.clone(),
                weight: belief.get(k + 1),
                centered: preds.centered(range.clone(), z.as_view(), dt),
            });
        }
    }
    let ensemble = controlled_update(&state.ensemble, dynamics, state.time, dt, &gain, &preds, &channels, xi)?;

    let mut fallbacks = state.fallbacks;
    let mut beliefs = Vec::with_capacity(groups.len());
    for ((range, belief), slots) in groups.iter().zip(&state.beliefs).zip(&dz) {
        let next = match config.beta_filter {
            BetaFilter::Fixed => belief.clone(),
            BetaFilter::Continuous => {
                let h_hat = preds.mean.rows(range.start, range.len()).into_owned();
                let unwrapped: Vec<DVector<f64>> = slots
                    .iter()
                    .map(|z| preds.unwrapped(range.clone(), z.as_view(), dt))
                    .collect();
                beta_step_continuous(belief, &h_hat, &unwrapped, config.q, dt)?
            }
            BetaFilter::Discrete(clutter) => {
                let update = beta_step_discrete_from(belief, &preds, range.clone(), slots, config.q, dt, clutter)?;
                fallbacks += update.fallback as u64;
                update.belief
            }
        };
        beliefs.push(next);
    }
    Ok(PdaFpfState {
        ensemble,
        beliefs,
        time: state.time + dt,
        step: state.step + 1,
        fallbacks,
    })
}
