//! Sequential importance resampling baseline.
//!
//! One weighted particle bank per target. Each step propagates the
//! particles by the signal SDE and multiplies every weight by the
//! association-marginalized likelihood
//!
//! ```text
//! lᵢ = (1/M) Σₘ N(ΔZᵐ; h(Xⁱ) dt, dt) / P₀(ΔZᵐ)
//! ```
//!
//! (standard-noise units, target detected with probability one, slots
//! equally likely a priori, the other slots distributed as `P₀`), then
//! resamples systematically when the effective sample size drops below a
//! threshold.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fpf::{particle_noise, Predictions};
use crate::model::{DynamicsModel, ObservationModel, Scan};
use crate::noise::{tags, NoiseKey};
use crate::pda::{scaled_scan, ClutterDensity};

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedEnsemble {
    pub ensemble: Ensemble,
    pub weights: DVector<f64>,
}

impl WeightedEnsemble {
    pub fn uniform(ensemble: Ensemble) -> Self {
        let n = ensemble.len();
        Self {
            ensemble,
            weights: DVector::from_element(n, 1.0 / n as f64),
        }
    }

    pub fn new(ensemble: Ensemble, weights: DVector<f64>) -> Result<Self> {
        if weights.len() != ensemble.len() {
            return Err(Error::Dimension {
                expected: ensemble.len(),
                got: weights.len(),
                context: "particle weights",
            });
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || (weights.sum() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidModel("weights must be non-negative and sum to 1".into()));
        }
        Ok(Self { ensemble, weights })
    }

    pub fn mean(&self) -> DVector<f64> {
        self.ensemble.states() * &self.weights
    }
}

/// `1 / Σ wᵢ²`.
pub fn effective_sample_size(weights: &DVector<f64>) -> f64 {
    1.0 / weights.norm_squared()
}

/// Systematic resampling with offset `u ∈ [0, 1)`: returns the index of
/// the ancestor of each new particle.
pub fn systematic_resample(weights: &DVector<f64>, u: f64) -> Vec<usize> {
    let n = weights.len();
    let mut out = Vec::with_capacity(n);
    let mut cumulative = weights[0];
    let mut j = 0;
    for k in 0..n {
        let target = (k as f64 + u) / n as f64;
        while cumulative < target && j + 1 < n {
            j += 1;
            cumulative += weights[j];
        }
        out.push(j);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SirConfig {
    pub clutter: ClutterDensity,
    /// Resample when ESS < `resample_threshold · N`.
    pub resample_threshold: f64,
}

impl Default for SirConfig {
    fn default() -> Self {
        Self {
            clutter: ClutterDensity::Gaussian,
            resample_threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SirStep {
    pub weighted: WeightedEnsemble,
    pub resampled: bool,
    /// Every weight vanished; weights were reset to uniform.
    pub degenerate: bool,
}

/// One SIR step for a single target bank. `step` addresses the noise.
#[allow(clippy::too_many_arguments)]
pub fn sir_step(
    weighted: &WeightedEnsemble,
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    scan: &Scan,
    time: f64,
    dt: f64,
    config: &SirConfig,
    key: NoiseKey,
    step: u64,
) -> Result<SirStep> {
    let ensemble = &weighted.ensemble;
    let (d, n) = (ensemble.dim(), ensemble.len());
    let xi = particle_noise(key, step, d, n);
    let mut moved = DMatrix::zeros(d, n);
    for i in 0..n {
        let x = dynamics.propagate(ensemble.particle(i), time, dt, xi.column(i))?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParticle { index: i, time });
        }
        moved.set_column(i, &x);
    }
    let moved = Ensemble::new(moved)?;

    let groups = obs.sensor_groups();
    let m = scan.groups.first().map_or(0, |g| g.len());
    if m == 0 {
        return Err(Error::InvalidModel("scan has no observations".into()));
    }
    let dz = scaled_scan(scan, obs, &groups, m)?;
    let preds = Predictions::compute(&moved, obs)?;
    let mut logw: Vec<f64> = weighted.weights.iter().map(|w| w.ln()).collect();
    for (range, slots) in groups.iter().zip(&dz) {
        let s = range.len() as f64;
        let norm = -0.5 * s * (2.0 * std::f64::consts::PI * dt).ln();
        let clutter: Vec<f64> = slots
            .iter()
            .map(|z| {
                config
                    .clutter
                    .log_density(&preds.unwrapped(range.clone(), z.as_view(), dt), dt, preds.scale)
            })
            .collect();
        for (i, lw) in logw.iter_mut().enumerate() {
            let terms: Vec<f64> = slots
                .iter()
                .zip(&clutter)
                .map(|(z, c)| norm - preds.residual(i, range.clone(), z.as_view(), dt).norm_squared() / (2.0 * dt) - c)
                .collect();
            let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = terms.iter().map(|t| (t - max).exp()).sum();
            *lw += max + (sum / m as f64).ln();
        }
    }
    let (weights, degenerate) = match crate::pda::normalize_log(&logw) {
        Some(w) => (w, false),
        None => (DVector::from_element(n, 1.0 / n as f64), true),
    };

    if effective_sample_size(&weights) < config.resample_threshold * n as f64 {
        let u: f64 = key.derive(tags::RESAMPLE).rng(step, 0).random();
        let ancestors = systematic_resample(&weights, u);
        return Ok(SirStep {
            weighted: WeightedEnsemble::uniform(moved.permuted(&ancestors)),
            resampled: true,
            degenerate,
        });
    }
    Ok(SirStep {
        weighted: WeightedEnsemble {
            ensemble: moved,
            weights,
        },
        resampled: false,
        degenerate,
    })
}
