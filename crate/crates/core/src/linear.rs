//! Linear-Gaussian references.
//!
//! For `dX = AX dt + σ_B dB`, `dZ = HX dt + σ_W dW` with a Gaussian prior
//! the association-weighted conditional moments obey, in standard-noise
//! units `H̃ = H/σ_W`, `dZ̃ = dZ/σ_W`,
//!
//! ```text
//! dμ = Aμ dt + ΣH̃ᵀ Σₘ βᵐ (dZ̃ᵐ − H̃μ dt)
//! dΣ = (AΣ + ΣAᵀ + Q − Σₘ (βᵐ)² ΣH̃ᵀH̃Σ) dt,   Q = diag(σ_B²)
//! ```
//!
//! and the exact gain is the constant `ΣH̃ᵀ`.

use nalgebra::{DMatrix, DVector};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::model::{DynamicsModel, ObservationModel};
use crate::pda::{beta_step_continuous, AssociationBelief};

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub a: DMatrix<f64>,
    pub h: DMatrix<f64>,
    /// `σ_B` per state coordinate.
    pub process_noise: DVector<f64>,
    /// `σ_W`.
    pub observation_noise: f64,
}

impl LinearModel {
    pub fn new(a: DMatrix<f64>, h: DMatrix<f64>, process_noise: DVector<f64>, observation_noise: f64) -> Result<Self> {
        let d = a.nrows();
        if !a.is_square() || h.ncols() != d || process_noise.len() != d {
            return Err(Error::InvalidModel("inconsistent linear model dimensions".into()));
        }
        if h.iter().all(|&x| x == 0.0) {
            return Err(Error::InvalidModel("observation matrix is zero".into()));
        }
        if !(observation_noise > 0.0)
            || a.iter()
                .chain(h.iter())
                .chain(process_noise.iter())
                .any(|x| !x.is_finite())
        {
            return Err(Error::InvalidModel("linear model must be finite with σ_W > 0".into()));
        }
        Ok(Self {
            a,
            h,
            process_noise,
            observation_noise,
        })
    }

    /// Recovers the matrices of linear dynamics and observation models.
    pub fn from_models(dynamics: &DynamicsModel, obs: &ObservationModel) -> Result<Self> {
        let a = dynamics
            .drift()
            .as_linear()
            .ok_or_else(|| Error::InvalidModel("drift is not linear".into()))?;
        let h = obs
            .map()
            .as_linear()
            .ok_or_else(|| Error::InvalidModel("observation map is not linear".into()))?;
        Self::new(a.clone(), h.clone(), dynamics.diffusion().clone(), obs.noise_scale())
    }

    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn dynamics(&self) -> DynamicsModel {
        DynamicsModel::linear(self.a.clone(), self.process_noise.clone()).expect("validated")
    }

    pub fn observation(&self) -> ObservationModel {
        ObservationModel::linear(self.h.clone(), self.observation_noise).expect("validated")
    }

    fn h_scaled(&self) -> DMatrix<f64> {
        &self.h / self.observation_noise
    }

    fn q(&self) -> DMatrix<f64> {
        DMatrix::from_diagonal(&self.process_noise.map(|s| s * s))
    }
}

/// Mean and covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.shape() != (mean.len(), mean.len()) {
            return Err(Error::Dimension {
                expected: mean.len(),
                got: cov.nrows(),
                context: "covariance",
            });
        }
        Ok(Self { mean, cov }.projected())
    }

    pub fn from_ensemble(ensemble: &Ensemble) -> Self {
        Self {
            mean: ensemble.mean(),
            cov: ensemble.covariance(),
        }
    }

    /// Symmetrizes and lifts eigenvalues below `-1e-10` to zero.
    fn projected(mut self) -> Self {
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        let eig = self.cov.clone().symmetric_eigen();
        if eig.eigenvalues.iter().any(|&l| l < -1e-10) {
            let lifted = eig.eigenvalues.map(|l| l.max(0.0));
            self.cov = &eig.eigenvectors * DMatrix::from_diagonal(&lifted) * eig.eigenvectors.transpose();
        }
        self
    }
}

/// `ΣHᵀ`.
pub fn kalman_gain_gaussian(belief: &GaussianBelief, h: &DMatrix<f64>) -> DMatrix<f64> {
    &belief.cov * h.transpose()
}

fn check_inputs(model: &LinearModel, beta: &AssociationBelief, dz: &[DVector<f64>]) -> Result<()> {
    if dz.len() != beta.m() {
        return Err(Error::Dimension {
            expected: beta.m(),
            got: dz.len(),
            context: "observations per step",
        });
    }
    if let Some(z) = dz.iter().find(|z| z.len() != model.h.nrows()) {
        return Err(Error::Dimension {
            expected: model.h.nrows(),
            got: z.len(),
            context: "observation increment",
        });
    }
    Ok(())
}

/// Euler step of the association-weighted moment equations; `dz` raw.
pub fn moment_oracle_step(
    belief: &GaussianBelief,
    model: &LinearModel,
    beta: &AssociationBelief,
    dz: &[DVector<f64>],
    dt: f64,
) -> Result<GaussianBelief> {
    check_inputs(model, beta, dz)?;
    let h = model.h_scaled();
    let sigma = &belief.cov;
    let mu = &belief.mean;
    let predicted = &h * mu * dt;
    let mut innovation = DVector::zeros(h.nrows());
    let mut weight_sq = 0.0;
    for (m, z) in dz.iter().enumerate() {
        let b = beta.get(m + 1);
        innovation += (z / model.observation_noise - &predicted) * b;
        weight_sq += b * b;
    }
    let sht = sigma * h.transpose();
    let mean = mu + &model.a * mu * dt + &sht * innovation;
    let cov =
        sigma + (&model.a * sigma + sigma * model.a.transpose() + model.q() - &sht * sht.transpose() * weight_sq) * dt;
    GaussianBelief::new(mean, cov)
}

/// Kalman–Bucy step (one observation, `β¹ = 1`).
pub fn kalman_bucy_step(
    belief: &GaussianBelief,
    model: &LinearModel,
    dz: &DVector<f64>,
    dt: f64,
) -> Result<GaussianBelief> {
    let beta = AssociationBelief::new(DVector::from_vec(vec![0.0, 1.0]))?;
    moment_oracle_step(belief, model, &beta, std::slice::from_ref(dz), dt)
}

/// Continuous-time PDAF in its tabulated form: Kalman gain `K_g = ΣH̃ᵀ`,
/// innovations `Iᵐ = dZ̃ᵐ − H̃μ dt`, control `K_g Σ βᵐ Iᵐ`, covariance
/// reduced by `Σ (βᵐ)² K_g K_gᵀ dt`.
pub fn classical_pdaf_step(
    belief: &GaussianBelief,
    model: &LinearModel,
    beta: &AssociationBelief,
    dz: &[DVector<f64>],
    dt: f64,
) -> Result<GaussianBelief> {
    check_inputs(model, beta, dz)?;
    let h = model.h_scaled();
    let kg = &belief.cov * h.transpose();
    let y_hat = &h * &belief.mean * dt;
    let mut control = DVector::zeros(belief.mean.len());
    let mut reduction = DMatrix::zeros(belief.mean.len(), belief.mean.len());
    for (m, z) in dz.iter().enumerate() {
        let b = beta.get(m + 1);
        let innovation = z / model.observation_noise - &y_hat;
        control += &kg * innovation * b;
        reduction += &kg * kg.transpose() * (b * b);
    }
    let a = &model.a;
    let mean = &belief.mean + a * &belief.mean * dt + control;
    let cov = &belief.cov + (a * &belief.cov + &belief.cov * a.transpose() + model.q() - reduction) * dt;
    GaussianBelief::new(mean, cov)
}

/// Linear PDA-FPF particle step with sample-moment gain `Σ⁽ᴺ⁾H̃ᵀ`; `xi`
/// holds one standard normal column per particle.
pub fn linear_pda_fpf_step(
    ensemble: &Ensemble,
    model: &LinearModel,
    beta: &AssociationBelief,
    dz: &[DVector<f64>],
    dt: f64,
    xi: &DMatrix<f64>,
) -> Result<Ensemble> {
    check_inputs(model, beta, dz)?;
    let n = ensemble.len();
    if n < 2 {
        return Err(Error::InvalidModel("linear PDA-FPF needs N ≥ 2".into()));
    }
    let d = ensemble.dim();
    if xi.shape() != (d, n) {
        return Err(Error::Dimension {
            expected: d * n,
            got: xi.len(),
            context: "particle noise",
        });
    }
    let h = model.h_scaled();
    let mu = ensemble.mean();
    let k = ensemble.covariance() * h.transpose();
    let h_mu = &h * &mu;
    let scaled: Vec<DVector<f64>> = dz.iter().map(|z| z / model.observation_noise).collect();
    let sq = dt.sqrt();
    let mut out = ensemble.states().clone();
    for i in 0..n {
        let x = ensemble.particle(i);
        let hx = &h * x;
        let mut u = DVector::zeros(h.nrows());
        for (m, z) in scaled.iter().enumerate() {
            let b = beta.get(m + 1);
            if b != 0.0 {
                u += (z - (&hx * (b / 2.0) + &h_mu * (1.0 - b / 2.0)) * dt) * b;
            }
        }
        let next = x + &model.a * x * dt + xi.column(i).component_mul(&model.process_noise) * sq + &k * u;
        out.set_column(i, &next);
    }
    Ensemble::new(out)
}

/// Association filter with `ĥ = H̃μ`; `dz` raw.
pub fn linear_beta_step(
    beta: &AssociationBelief,
    mu: &DVector<f64>,
    model: &LinearModel,
    dz: &[DVector<f64>],
    q: f64,
    dt: f64,
) -> Result<AssociationBelief> {
    let h_hat = model.h_scaled() * mu;
    let scaled: Vec<DVector<f64>> = dz.iter().map(|z| z / model.observation_noise).collect();
    beta_step_continuous(beta, &h_hat, &scaled, q, dt)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_row_slice(x)
    }

    fn model() -> LinearModel {
        LinearModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -0.5, -0.2]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
            v(&[0.3, 1.0]),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn gain_products() {
        let b = GaussianBelief::new(v(&[0.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
        assert_eq!(
            kalman_gain_gaussian(&b, &DMatrix::identity(2, 2)),
            DMatrix::identity(2, 2)
        );
        let b = GaussianBelief::new(v(&[0.0, 0.0]), DMatrix::from_diagonal(&v(&[2.0, 3.0]))).unwrap();
        assert_eq!(
            kalman_gain_gaussian(&b, &DMatrix::from_row_slice(1, 2, &[1.0, 0.0])),
            DMatrix::from_column_slice(2, 1, &[2.0, 0.0])
        );
    }

    #[test]
    fn zero_beta_is_lyapunov() {
        let m = model();
        let b = GaussianBelief::new(v(&[1.0, -1.0]), DMatrix::from_row_slice(2, 2, &[1.0, 0.2, 0.2, 0.5])).unwrap();
        let beta = AssociationBelief::new(v(&[1.0, 0.0, 0.0])).unwrap();
        let dt = 0.01;
        let next = moment_oracle_step(&b, &m, &beta, &[v(&[3.0]), v(&[-1.0])], dt).unwrap();
        let expected = &b.cov + (&m.a * &b.cov + &b.cov * m.a.transpose() + m.q()) * dt;
        assert_relative_eq!(next.cov, expected, epsilon = 1e-14);
        assert_relative_eq!(next.mean, &b.mean + &m.a * &b.mean * dt, epsilon = 1e-14);
    }

    #[test]
    fn full_beta_is_kalman_bucy() {
        let m = model();
        let b = GaussianBelief::new(v(&[1.0, -1.0]), DMatrix::identity(2, 2)).unwrap();
        let dt = 0.01;
        let dz = v(&[0.02]);
        let next = kalman_bucy_step(&b, &m, &dz, dt).unwrap();
        let h = &m.h / 0.5;
        let k = &b.cov * h.transpose();
        let mean = &b.mean + &m.a * &b.mean * dt + &k * (&dz / 0.5 - &h * &b.mean * dt);
        let cov = &b.cov + (&m.a * &b.cov + &b.cov * m.a.transpose() + m.q() - &k * k.transpose()) * dt;
        assert_relative_eq!(next.mean, mean, epsilon = 1e-14);
        assert_relative_eq!(next.cov, cov, epsilon = 1e-14);
    }

    #[test]
    fn split_beta_innovation_weight() {
        // β = ½: particle innovation dZ − (¼ H̃x + ¾ H̃μ) dt.
        let m = LinearModel::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), v(&[0.0]), 1.0).unwrap();
        let e = Ensemble::from_scalars(&[0.0, 2.0]).unwrap();
        let beta = AssociationBelief::new(v(&[0.5, 0.5])).unwrap();
        let dt = 0.1;
        let z = 0.4;
        let next = linear_pda_fpf_step(&e, &m, &beta, &[v(&[z])], dt, &DMatrix::zeros(1, 2)).unwrap();
        // Σ⁽ᴺ⁾ = 2, μ = 1.
        let expected = 2.0 + 2.0 * 0.5 * (z - (0.25 * 2.0 + 0.75 * 1.0) * dt);
        assert_relative_eq!(next.particle(1)[0], expected, epsilon = 1e-14);
    }

    #[test]
    fn zero_target_beta_is_uncontrolled() {
        let m = model();
        let e = Ensemble::from_particles(&[v(&[0.0, 1.0]), v(&[1.0, -1.0]), v(&[2.0, 0.5])]).unwrap();
        let beta = AssociationBelief::new(v(&[1.0, 0.0])).unwrap();
        let xi = DMatrix::from_row_slice(2, 3, &[0.1, 0.2, 0.3, -0.4, 0.5, -0.6]);
        let next = linear_pda_fpf_step(&e, &m, &beta, &[v(&[9.0])], 0.01, &xi).unwrap();
        let dynamics = m.dynamics();
        for i in 0..3 {
            let expected = dynamics.propagate(e.particle(i), 0.0, 0.01, xi.column(i)).unwrap();
            assert_relative_eq!(next.particle(i).into_owned(), expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn linear_beta_relaxes_and_matches_general_filter() {
        let m = model();
        let beta = AssociationBelief::new(v(&[0.2, 0.5, 0.3])).unwrap();
        let dz = [v(&[0.01]), v(&[-0.03])];
        let zero = linear_beta_step(&beta, &v(&[0.0, 4.0]), &m, &dz, 10.0, 0.01).unwrap();
        for k in 0..3 {
            let expected = beta.get(k) + 10.0 * (1.0 - 3.0 * beta.get(k)) * 0.01;
            assert_relative_eq!(zero.get(k), expected, epsilon = 1e-14);
        }
        let mu = v(&[0.7, 0.1]);
        let a = linear_beta_step(&beta, &mu, &m, &dz, 3.0, 0.01).unwrap();
        let h_hat = &m.h * &mu / 0.5;
        let scaled: Vec<_> = dz.iter().map(|z| z / 0.5).collect();
        let b = beta_step_continuous(&beta, &h_hat, &scaled, 3.0, 0.01).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn linear_beta_hand_case() {
        let m = LinearModel::new(DMatrix::zeros(1, 1), DMatrix::identity(1, 1), v(&[0.0]), 1.0).unwrap();
        let dt = 0.01;
        let next = linear_beta_step(
            &AssociationBelief::uniform(1).unwrap(),
            &v(&[1.0]),
            &m,
            &[v(&[dt])],
            0.0,
            dt,
        )
        .unwrap();
        assert_relative_eq!(next.get(1), 0.5 + dt / 8.0, epsilon = 1e-15);
    }

    proptest! {
        #[test]
        fn pdaf_equals_moment_oracle(
            mean in prop::collection::vec(-2.0..2.0f64, 2),
            l in prop::collection::vec(-1.0..1.0f64, 4),
            b in 0.0..1.0f64,
            z in prop::collection::vec(-0.2..0.2f64, 2),
        ) {
            let m = model();
            let lm = DMatrix::from_row_slice(2, 2, &l);
            let cov = &lm * lm.transpose() + DMatrix::identity(2, 2) * 0.1;
            let belief = GaussianBelief::new(v(&mean), cov).unwrap();
            let beta = AssociationBelief::new(v(&[(1.0 - b) / 2.0, b, (1.0 - b) / 2.0])).unwrap();
            let dz = [v(&[z[0]]), v(&[z[1]])];
            let a = moment_oracle_step(&belief, &m, &beta, &dz, 0.01).unwrap();
            let c = classical_pdaf_step(&belief, &m, &beta, &dz, 0.01).unwrap();
            prop_assert!((a.mean - c.mean).amax() < 1e-12);
            prop_assert!((&a.cov - &c.cov).amax() < 1e-12);
            prop_assert!((&a.cov - a.cov.transpose()).amax() < 1e-12);
        }
    }
}
