//! The feedback particle filter step.
//!
//! Each particle moves by its own dynamics plus gain times innovation:
//!
//! ```text
//! Xⁱ ← Xⁱ + a(Xⁱ) dt + σ_B √dt ξⁱ + K(Xⁱ) (dZ − ½ (h(Xⁱ) + ĥ) dt)
//! ```
//!
//! with `ĥ` and `K` computed from the ensemble before the step. The
//! filters work in units where the observation noise is standard: `h` and
//! `dZ` are divided by `σ_W` before they enter the gain and innovation.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::circular::{circular_mean, wrap_period};
use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::gain::{GainApproximation, GainMethod};
use crate::model::{DynamicsModel, ObservationMap, ObservationModel};
use crate::noise::{tags, NoiseKey};

/// `h` evaluated on every particle, with its ensemble mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Predictions {
    /// `s × N`.
    pub values: DMatrix<f64>,
    /// `ĥ`; circular mean for angle coordinates.
    pub mean: DVector<f64>,
    /// `h(Xⁱ) − ĥ`, wrapped for angle coordinates.
    pub deviations: DMatrix<f64>,
    /// Per-coordinate period in the scaled units, if any.
    pub periods: Vec<Option<f64>>,
    /// Divisor applied to the raw map (`σ_W`, or 1).
    pub scale: f64,
}

impl Predictions {
    /// Scaled predictions `h / σ_W`.
    pub fn compute(ensemble: &Ensemble, obs: &ObservationModel) -> Result<Self> {
        Self::with_scale(ensemble, obs.map(), obs.noise_scale())
    }

    /// Predictions of the raw map.
    pub fn raw(ensemble: &Ensemble, map: &dyn ObservationMap) -> Result<Self> {
        Self::with_scale(ensemble, map, 1.0)
    }

    pub fn with_scale(ensemble: &Ensemble, map: &dyn ObservationMap, scale: f64) -> Result<Self> {
        let s = map.dim_obs();
        let n = ensemble.len();
        let mut values = DMatrix::zeros(s, n);
        for i in 0..n {
            let h = map.eval(ensemble.particle(i))?;
            if h.len() != s {
                return Err(Error::Dimension {
                    expected: s,
                    got: h.len(),
                    context: "observation map output",
                });
            }
            values.set_column(i, &(h / scale));
        }
        let periods: Vec<Option<f64>> = (0..s).map(|j| map.period(j).map(|p| p / scale)).collect();
        let mut mean = DVector::zeros(s);
        let mut deviations = DMatrix::zeros(s, n);
        for j in 0..s {
            let row: Vec<f64> = values.row(j).iter().copied().collect();
            mean[j] = match periods[j] {
                Some(p) => circular_mean(row.iter().copied(), p),
                None => row.iter().sum::<f64>() / n as f64,
            };
            for i in 0..n {
                let d = row[i] - mean[j];
                deviations[(j, i)] = match periods[j] {
                    Some(p) => wrap_period(d, p),
                    None => d,
                };
            }
        }
        Ok(Self {
            values,
            mean,
            deviations,
            periods,
            scale,
        })
    }

    pub fn dim_obs(&self) -> usize {
        self.mean.len()
    }

    pub fn len(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.values.ncols() == 0
    }

    fn wrap(&self, coord: usize, x: f64) -> f64 {
        match self.periods[coord] {
            Some(p) => wrap_period(x, p),
            None => x,
        }
    }

    /// `dz − ĥ dt` on the coordinates `range`, with the rate `dz/dt`
    /// brought onto the same branch as `ĥ` first.
    pub fn centered(&self, range: Range<usize>, dz: DVectorView<'_, f64>, dt: f64) -> DVector<f64> {
        DVector::from_fn(range.len(), |r, _| {
            let j = range.start + r;
            self.wrap(j, dz[r] / dt - self.mean[j]) * dt
        })
    }

    /// `dz` shifted by whole periods so that `dz/dt` is nearest to `ĥ`.
    pub fn unwrapped(&self, range: Range<usize>, dz: DVectorView<'_, f64>, dt: f64) -> DVector<f64> {
        let c = self.centered(range.clone(), dz, dt);
        DVector::from_fn(range.len(), |r, _| self.mean[range.start + r] * dt + c[r])
    }

    /// `dz − h(Xⁱ) dt` on `range`, wrapped like [`Predictions::centered`].
    pub fn residual(&self, i: usize, range: Range<usize>, dz: DVectorView<'_, f64>, dt: f64) -> DVector<f64> {
        DVector::from_fn(range.len(), |r, _| {
            let j = range.start + r;
            self.wrap(j, dz[r] / dt - self.values[(j, i)]) * dt
        })
    }
}

/// Coordinate-wise ensemble mean of `h` (circular for angles).
pub fn ensemble_prediction(ensemble: &Ensemble, map: &dyn ObservationMap) -> Result<DVector<f64>> {
    Ok(Predictions::raw(ensemble, map)?.mean)
}

/// Ensemble plus the time it represents.
#[derive(Debug, Clone, PartialEq)]
pub struct FpfState {
    pub ensemble: Ensemble,
    pub time: f64,
    /// Steps taken so far; addresses the particle noise.
    pub step: u64,
}

impl FpfState {
    pub fn new(ensemble: Ensemble, time: f64) -> Self {
        Self {
            ensemble,
            time,
            step: 0,
        }
    }
}

/// One weighted observation entering the particle control: coordinates
/// `range` of the scaled observation, weight `β`, and the centered
/// increment `dZ − ĥ dt`.
#[derive(Debug, Clone)]
pub(crate) struct Channel {
    pub range: Range<usize>,
    pub weight: f64,
    pub centered: DVector<f64>,
}

/// Propagates every particle and applies
/// `K(Xⁱ) Σ β (dZ − [β/2 h(Xⁱ) + (1 − β/2) ĥ] dt)` over the channels.
/// `xi` holds one standard normal column per particle.
#[allow(clippy::too_many_arguments)]
pub(crate) fn controlled_update(
    ensemble: &Ensemble,
    dynamics: &DynamicsModel,
    time: f64,
    dt: f64,
    gain: &GainApproximation,
    preds: &Predictions,
    channels: &[Channel],
    xi: &DMatrix<f64>,
) -> Result<Ensemble> {
    let d = ensemble.dim();
    let n = ensemble.len();
    if dynamics.dim() != d {
        return Err(Error::Dimension {
            expected: d,
            got: dynamics.dim(),
            context: "dynamics vs ensemble",
        });
    }
    if xi.shape() != (d, n) {
        return Err(Error::Dimension {
            expected: d * n,
            got: xi.len(),
            context: "particle noise",
        });
    }
    let s = preds.dim_obs();
    let constant = match gain {
        GainApproximation::Constant(k) => Some(k),
        _ => None,
    };
    let sq = dt.sqrt();
    let sigma = dynamics.diffusion();
    let mut out = DMatrix::zeros(d, n);
    let mut u = DVector::zeros(s);
    for i in 0..n {
        let x = ensemble.particle(i);
        u.fill(0.0);
        for ch in channels {
            if ch.weight == 0.0 {
                continue;
            }
            for (r, j) in ch.range.clone().enumerate() {
                u[j] += ch.weight * (ch.centered[r] - 0.5 * ch.weight * preds.deviations[(j, i)] * dt);
            }
        }
        let a = dynamics.drift_at(x, time)?;
        let control = match constant {
            Some(k) => k * &u,
            None => gain.evaluate(x) * &u,
        };
        let mut col = out.column_mut(i);
        for r in 0..d {
            col[r] = x[r] + a[r] * dt + sigma[r] * sq * xi[(r, i)] + control[r];
        }
        if col.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteParticle { index: i, time });
        }
    }
    Ok(Ensemble::new(out).expect("finite by construction"))
}

/// Standard normal particle noise for `step`.
pub fn particle_noise(key: NoiseKey, step: u64, dim: usize, n: usize) -> DMatrix<f64> {
    key.derive(tags::PARTICLES).normal_matrix(step, dim, n)
}

/// One FPF step with noise drawn from `key` at the state's step index.
pub fn fpf_step(
    state: &FpfState,
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    dz: &DVector<f64>,
    dt: f64,
    gain_method: GainMethod,
    key: NoiseKey,
) -> Result<FpfState> {
    let xi = particle_noise(key, state.step, state.ensemble.dim(), state.ensemble.len());
    fpf_step_with_noise(state, dynamics, obs, dz, dt, gain_method, &xi)
}

/// One FPF step with explicit particle noise (`d × N`).
pub fn fpf_step_with_noise(
    state: &FpfState,
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    dz: &DVector<f64>,
    dt: f64,
    gain_method: GainMethod,
    xi: &DMatrix<f64>,
) -> Result<FpfState> {
    if !(dt > 0.0) {
        return Err(Error::InvalidModel("dt must be > 0".into()));
    }
    let s = obs.dim_obs();
    if dz.len() != s {
        return Err(Error::Dimension {
            expected: s,
            got: dz.len(),
            context: "observation increment",
        });
    }
    let preds = Predictions::compute(&state.ensemble, obs)?;
    let gain = gain_method.compute(&state.ensemble, &preds.deviations)?;
    let scaled = dz / obs.noise_scale();
    let channel = Channel {
        range: 0..s,
        weight: 1.0,
        centered: preds.centered(0..s, scaled.as_view(), dt),
    };
    let ensemble = controlled_update(&state.ensemble, dynamics, state.time, dt, &gain, &preds, &[channel], xi)?;
    Ok(FpfState {
        ensemble,
        time: state.time + dt,
        step: state.step + 1,
    })
}
