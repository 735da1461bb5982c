//! Particle ensembles.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::error::{Error, Result};
use crate::noise::NoiseKey;

/// `N` particles in `R^d`, stored column-wise (`d × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    states: DMatrix<f64>,
}

impl Ensemble {
    pub fn new(states: DMatrix<f64>) -> Result<Self> {
        if states.nrows() == 0 || states.ncols() == 0 {
            return Err(Error::InvalidModel("ensemble needs d ≥ 1 and N ≥ 1".into()));
        }
        if let Some(i) = (0..states.ncols()).find(|&i| states.column(i).iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFiniteParticle {
                index: i,
                time: f64::NAN,
            });
        }
        Ok(Self { states })
    }

    pub fn from_particles(particles: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = particles.first() else {
            return Err(Error::InvalidModel("empty ensemble".into()));
        };
        let d = first.len();
        if let Some(bad) = particles.iter().find(|p| p.len() != d) {
            return Err(Error::Dimension {
                expected: d,
                got: bad.len(),
                context: "particle",
            });
        }
        Self::new(DMatrix::from_columns(particles))
    }

    /// Scalar particles.
    pub fn from_scalars(values: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_row_slice(1, values.len(), values))
    }

    /// Draws `n` particles from `N(mean, cov)`. Particle `i` uses stream `i`
    /// of `key`, so the draw is independent of `n` for the common prefix.
    pub fn sample_gaussian(mean: &DVector<f64>, cov: &DMatrix<f64>, n: usize, key: NoiseKey) -> Result<Self> {
        let d = mean.len();
        if cov.shape() != (d, d) {
            return Err(Error::Dimension {
                expected: d,
                got: cov.nrows(),
                context: "initial covariance",
            });
        }
        let factor = psd_factor(cov)?;
        let xi = key.normal_matrix(0, d, n);
        let mut states = &factor * xi;
        for mut col in states.column_iter_mut() {
            col += mean;
        }
        Self::new(states)
    }

    pub fn dim(&self) -> usize {
        self.states.nrows()
    }

    pub fn len(&self) -> usize {
        self.states.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.states.ncols() == 0
    }

    pub fn particle(&self, i: usize) -> DVectorView<'_, f64> {
        self.states.column(i)
    }

    pub fn states(&self) -> &DMatrix<f64> {
        &self.states
    }

    pub fn into_states(self) -> DMatrix<f64> {
        self.states
    }

    pub fn mean(&self) -> DVector<f64> {
        self.states.column_mean()
    }

    /// Sample covariance with the `N - 1` denominator (zero for `N = 1`).
    pub fn covariance(&self) -> DMatrix<f64> {
        let n = self.len();
        let mean = self.mean();
        let mut centered = self.states.clone();
        for mut col in centered.column_iter_mut() {
            col -= &mean;
        }
        if n < 2 {
            return DMatrix::zeros(self.dim(), self.dim());
        }
        &centered * centered.transpose() / (n as f64 - 1.0)
    }

    /// Reorders particles: particle `i` of the result is particle `order[i]`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let cols: Vec<_> = order.iter().map(|&i| self.states.column(i).into_owned()).collect();
        Self {
            states: DMatrix::from_columns(&cols),
        }
    }
}

/// A matrix `L` with `L Lᵀ = cov` for symmetric positive semi-definite `cov`.
pub(crate) fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(chol) = cov.clone().cholesky() {
        return Ok(chol.l());
    }
    let eig = cov.clone().symmetric_eigen();
    if eig.eigenvalues.iter().any(|&l| l < -1e-10 * (1.0 + cov.amax())) {
        return Err(Error::InvalidModel("covariance is not positive semi-definite".into()));
    }
    let sqrt = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}
