//! One-dimensional grid solver for the association-weighted
//! Kushner–Stratonovich equation
//!
//! ```text
//! dp = L†p dt + Σₘ βᵐ (h − ĥ)(dZᵐ − ĥ dt) p,   L†p = −∂ₓ(a p) + ½σ_B² ∂ₓₓp
//! ```
//!
//! used to check the particle filters against the exact conditional
//! density. Each step solves the Fokker–Planck part with a conservative
//! upwind scheme (sub-stepped for stability), then applies the measurement
//! factor `1 + Σₘ βᵐ (h − ĥ)(Δzᵐ − ĥ Δt)`, clips negatives and renormalizes.

use nalgebra::DVector;

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, ObservationModel};
use crate::pda::AssociationBelief;

/// Uniform cell-centred grid on `[x_min, x_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub x_min: f64,
    pub x_max: f64,
    pub n_cells: usize,
}

impl Grid {
    pub fn new(x_min: f64, x_max: f64, n_cells: usize) -> Result<Self> {
        if !(x_max > x_min) || n_cells < 3 {
            return Err(Error::InvalidModel("grid needs x_max > x_min and ≥ 3 cells".into()));
        }
        Ok(Self { x_min, x_max, n_cells })
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n_cells as f64
    }

    pub fn center(&self, j: usize) -> f64 {
        self.x_min + (j as f64 + 0.5) * self.dx()
    }

    /// Right edge of cell `j`.
    pub fn edge(&self, j: usize) -> f64 {
        self.x_min + (j + 1) as f64 * self.dx()
    }
}

/// Density values per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridDensity {
    pub grid: Grid,
    pub values: DVector<f64>,
}

impl GridDensity {
    /// Normalizes `values` to unit mass.
    pub fn new(grid: Grid, values: DVector<f64>) -> Result<Self> {
        if values.len() != grid.n_cells {
            return Err(Error::Dimension {
                expected: grid.n_cells,
                got: values.len(),
                context: "grid values",
            });
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidModel("density values must be finite and ≥ 0".into()));
        }
        let mass = values.sum() * grid.dx();
        if !(mass > 0.0) {
            return Err(Error::InvalidModel("density has zero mass".into()));
        }
        Ok(Self {
            grid,
            values: values / mass,
        })
    }

    pub fn gaussian(grid: Grid, mean: f64, variance: f64) -> Result<Self> {
        let values = DVector::from_fn(grid.n_cells, |j, _| {
            let x = grid.center(j);
            (-(x - mean).powi(2) / (2.0 * variance)).exp()
        });
        Self::new(grid, values)
    }

    pub fn mass(&self) -> f64 {
        self.values.sum() * self.grid.dx()
    }

    pub fn expectation(&self, f: impl Fn(f64) -> f64) -> f64 {
        let dx = self.grid.dx();
        self.values
            .iter()
            .enumerate()
            .map(|(j, p)| p * f(self.grid.center(j)) * dx)
            .sum()
    }

    pub fn mean(&self) -> f64 {
        self.expectation(|x| x)
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.expectation(|x| (x - m).powi(2))
    }

    /// CDF at the right edge of every cell.
    pub fn cdf(&self) -> Vec<f64> {
        let dx = self.grid.dx();
        self.values
            .iter()
            .scan(0.0, |acc, p| {
                *acc += p * dx;
                Some(*acc)
            })
            .collect()
    }

    /// Mass in the outermost cell on either side.
    pub fn boundary_mass(&self) -> f64 {
        (self.values[0] + self.values[self.grid.n_cells - 1]) * self.grid.dx()
    }
}

/// Diagnostics of one grid step.
#[derive(Debug, Clone, PartialEq)]
pub struct KsStep {
    pub density: GridDensity,
    /// Negative mass removed after the measurement update.
    pub clipped_mass: f64,
    /// Mass before renormalization (after the Fokker–Planck part).
    pub transport_mass: f64,
    pub substeps: usize,
}

/// Boundary mass above which a step is refused.
pub const BOUNDARY_LIMIT: f64 = 1e-6;

/// One step of the grid solver; `dz` raw, `time` the start of the step.
pub fn ks_step(
    density: &GridDensity,
    dynamics: &DynamicsModel,
    obs: &ObservationModel,
    beta: &AssociationBelief,
    dz: &[DVector<f64>],
    time: f64,
    dt: f64,
) -> Result<KsStep> {
    if dynamics.dim() != 1 || obs.dim_obs() != 1 {
        return Err(Error::InvalidModel("grid solver is one-dimensional".into()));
    }
    if dz.len() != beta.m() {
        return Err(Error::Dimension {
            expected: beta.m(),
            got: dz.len(),
            context: "observations per step",
        });
    }
    let boundary = density.boundary_mass();
    if boundary > BOUNDARY_LIMIT {
        return Err(Error::GridBoundary { mass: boundary });
    }
    let grid = density.grid;
    let n = grid.n_cells;
    let dx = grid.dx();
    let diffusion = 0.5 * dynamics.diffusion()[0].powi(2);
    let point = |x: f64| DVector::from_element(1, x);
    let mut a_face = Vec::with_capacity(n - 1);
    for j in 0..n - 1 {
        let x = grid.edge(j);
        a_face.push(dynamics.drift_at(point(x).as_view(), time)?[0]);
    }
    let a_max = a_face.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let rate = 2.0 * diffusion / (dx * dx) + a_max / dx;
    let substeps = if rate > 0.0 {
        ((dt * rate) / 0.9).ceil().max(1.0) as usize
    } else {
        1
    };
    let h = dt / substeps as f64;

    let mut p = density.values.clone();
    let mut flux = vec![0.0; n + 1];
    for _ in 0..substeps {
        for j in 0..n - 1 {
            let a = a_face[j];
            let upwind = if a > 0.0 { p[j] } else { p[j + 1] };
            flux[j + 1] = a * upwind - diffusion * (p[j + 1] - p[j]) / dx;
        }
        for j in 0..n {
            p[j] -= h / dx * (flux[j + 1] - flux[j]);
        }
    }
    let transport_mass = p.sum() * dx;

    let sigma = obs.noise_scale();
    let h_vals: Vec<f64> = (0..n)
        .map(|j| Ok(obs.eval(point(grid.center(j)).as_view())?[0] / sigma))
        .collect::<Result<_>>()?;
    let total: f64 = p.sum();
    let h_hat: f64 = p.iter().zip(&h_vals).map(|(pj, hj)| pj * hj).sum::<f64>() / total;
    let mut clipped = 0.0;
    for j in 0..n {
        let mut factor = 1.0;
        for (m, z) in dz.iter().enumerate() {
            factor += beta.get(m + 1) * (h_vals[j] - h_hat) * (z[0] / sigma - h_hat * dt);
        }
        p[j] *= factor;
        if p[j] < 0.0 {
            clipped -= p[j] * dx;
            p[j] = 0.0;
        }
    }
    Ok(KsStep {
        density: GridDensity::new(grid, p)?,
        clipped_mass: clipped,
        transport_mass,
        substeps,
    })
}

/// `Σⱼ |F_grid − F_emp| dx` over the cell right edges: the L1 distance
/// between the grid CDF and the empirical CDF of a 1-d ensemble.
pub fn distribution_distance(density: &GridDensity, ensemble: &Ensemble) -> Result<f64> {
    if ensemble.dim() != 1 {
        return Err(Error::InvalidModel("distribution distance needs a 1-d ensemble".into()));
    }
    let mut xs: Vec<f64> = ensemble.states().iter().copied().collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let grid = density.grid;
    let cdf = density.cdf();
    let mut k = 0;
    let mut total = 0.0;
    for (j, f) in cdf.iter().enumerate() {
        let edge = grid.edge(j);
        while k < xs.len() && xs[k] <= edge {
            k += 1;
        }
        total += (f - k as f64 / n).abs();
    }
    Ok(total * grid.dx())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FnMap;
    use crate::noise::NoiseKey;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVectorView};
    use rand::Rng;
    use std::sync::Arc;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn ou(a: f64, sigma: f64) -> DynamicsModel {
        DynamicsModel::linear(DMatrix::from_element(1, 1, a), v(&[sigma])).unwrap()
    }

    #[test]
    fn heat_equation_variance_growth() {
        let grid = Grid::new(-10.0, 10.0, 2000).unwrap();
        let mut p = GridDensity::gaussian(grid, 0.0, 0.5).unwrap();
        let obs = ObservationModel::linear(DMatrix::identity(1, 1), 1.0).unwrap();
        let beta = AssociationBelief::new(v(&[1.0, 0.0])).unwrap();
        let v0 = p.variance();
        for k in 0..10 {
            let step = ks_step(&p, &ou(0.0, 1.0), &obs, &beta, &[v(&[0.3])], k as f64 * 0.01, 0.01).unwrap();
            assert_relative_eq!(step.transport_mass, 1.0, epsilon = 1e-10);
            p = step.density;
        }
        assert_relative_eq!(p.variance() - v0, 0.1, epsilon = 1e-4);
        assert_relative_eq!(p.mean(), 0.0, epsilon = 1e-10);
    }

    #[test]
    fn constant_observation_leaves_density_unchanged() {
        let grid = Grid::new(-5.0, 5.0, 500).unwrap();
        let p = GridDensity::gaussian(grid, 0.3, 0.4).unwrap();
        let obs = ObservationModel::new(Arc::new(FnMap::new(1, |_: DVectorView<'_, f64>| v(&[2.0]))), 1.0).unwrap();
        let still = DynamicsModel::linear(DMatrix::zeros(1, 1), v(&[0.0])).unwrap();
        let step = ks_step(
            &p,
            &still,
            &obs,
            &AssociationBelief::uniform(1).unwrap(),
            &[v(&[5.0])],
            0.0,
            0.01,
        )
        .unwrap();
        assert_relative_eq!(step.density.values, p.values, epsilon = 1e-12);
        assert_eq!(step.clipped_mass, 0.0);
    }

    #[test]
    fn tracks_kalman_bucy() {
        use crate::linear::{kalman_bucy_step, GaussianBelief, LinearModel};
        let model = LinearModel::new(
            DMatrix::from_element(1, 1, -1.0),
            DMatrix::identity(1, 1),
            v(&[1.0]),
            0.5,
        )
        .unwrap();
        let grid = Grid::new(-8.0, 8.0, 1600).unwrap();
        let mut p = GridDensity::gaussian(grid, 1.0, 0.3).unwrap();
        let mut kb = GaussianBelief::new(v(&[1.0]), DMatrix::from_element(1, 1, 0.3)).unwrap();
        let beta = AssociationBelief::new(v(&[0.0, 1.0])).unwrap();
        let dt: f64 = 0.001;
        let mut rng = NoiseKey::new(5).rng(0, 0);
        let mut x: f64 = 0.5;
        for k in 0..500 {
            let dz = v(&[x * dt + 0.5 * dt.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal)]);
            p = ks_step(
                &p,
                &model.dynamics(),
                &model.observation(),
                &beta,
                std::slice::from_ref(&dz),
                k as f64 * dt,
                dt,
            )
            .unwrap()
            .density;
            kb = kalman_bucy_step(&kb, &model, &dz, dt).unwrap();
            x += -x * dt + dt.sqrt() * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
        assert_relative_eq!(p.mean(), kb.mean[0], epsilon = 0.02);
        assert_relative_eq!(p.variance(), kb.cov[(0, 0)], max_relative = 0.03);
    }

    #[test]
    fn boundary_mass_is_refused() {
        let grid = Grid::new(-1.0, 1.0, 100).unwrap();
        let p = GridDensity::new(grid, DVector::from_element(100, 1.0)).unwrap();
        let obs = ObservationModel::linear(DMatrix::identity(1, 1), 1.0).unwrap();
        let err = ks_step(
            &p,
            &ou(0.0, 1.0),
            &obs,
            &AssociationBelief::uniform(1).unwrap(),
            &[v(&[0.0])],
            0.0,
            0.01,
        )
        .unwrap_err();
        assert!(matches!(err, Error::GridBoundary { .. }));
    }

    #[test]
    fn distances() {
        let grid = Grid::new(0.0, 1.0, 1000).unwrap();
        let uniform = GridDensity::new(grid, DVector::from_element(1000, 1.0)).unwrap();
        let left = Ensemble::from_scalars(&[0.0; 10]).unwrap();
        assert_relative_eq!(distribution_distance(&uniform, &left).unwrap(), 0.5, epsilon = 1e-3);

        let mut spike = DVector::zeros(1000);
        spike[400] = 1.0;
        let point = GridDensity::new(grid, spike).unwrap();
        let at = Ensemble::from_scalars(&[grid.center(400); 5]).unwrap();
        assert!(distribution_distance(&point, &at).unwrap() < 1e-12);
    }

    #[test]
    fn sampled_ensemble_is_close() {
        let grid = Grid::new(-6.0, 6.0, 1200).unwrap();
        let p = GridDensity::gaussian(grid, 0.5, 1.0).unwrap();
        let cdf = p.cdf();
        let mut rng = NoiseKey::new(2).rng(0, 0);
        let xs: Vec<f64> = (0..10_000)
            .map(|_| {
                let u: f64 = rng.random();
                let j = cdf.partition_point(|&f| f < u).min(grid.n_cells - 1);
                grid.center(j)
            })
            .collect();
        let e = Ensemble::from_scalars(&xs).unwrap();
        assert!(distribution_distance(&p, &e).unwrap() <= 0.05);
    }
}
