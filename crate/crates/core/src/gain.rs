//! Gain function approximations.
//!
//! The gain `K = ∇φ` solves a weighted Poisson equation with the ensemble
//! as weight. Projecting its weak form on a basis `{ψ_l}` gives the linear
//! system `A κ_j = b_j` with
//!
//! ```text
//! A_kl  = (1/N) Σᵢ ∇ψ_l(Xⁱ)·∇ψ_k(Xⁱ)
//! b_j^k = (1/N) Σᵢ (h_j(Xⁱ) − ĥ_j) ψ_k(Xⁱ)
//! ```
//!
//! and `K(x) = Σ_l κ_j^l ∇ψ_l(x)`. With the coordinate functions as basis
//! `A = I` and the gain is the constant `(1/N) Σᵢ Xⁱ (h(Xⁱ) − ĥ)ᵀ`.

use nalgebra::{DMatrix, DVector, DVectorView};

use crate::ensemble::Ensemble;
use crate::error::{Error, Result};
use crate::fpf::Predictions;
use crate::model::ObservationMap;

/// Basis functions for the Galerkin solve.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BasisSet {
    /// `x₁, …, x_d`.
    Coordinates,
    /// Coordinates followed by all products `x_k x_l` with `k ≤ l`.
    Quadratic,
}

impl BasisSet {
    pub fn len(&self, dim: usize) -> usize {
        match self {
            BasisSet::Coordinates => dim,
            BasisSet::Quadratic => dim + dim * (dim + 1) / 2,
        }
    }

    pub fn values(&self, x: DVectorView<'_, f64>) -> DVector<f64> {
        let d = x.len();
        let mut out = DVector::zeros(self.len(d));
        out.rows_mut(0, d).copy_from(&x);
        if let BasisSet::Quadratic = self {
            let mut l = d;
            for k in 0..d {
                for j in k..d {
                    out[l] = x[k] * x[j];
                    l += 1;
                }
            }
        }
        out
    }

    /// Gradients as the columns of a `d × L` matrix.
    pub fn gradients(&self, x: DVectorView<'_, f64>) -> DMatrix<f64> {
        let d = x.len();
        let mut out = DMatrix::zeros(d, self.len(d));
        for k in 0..d {
            out[(k, k)] = 1.0;
        }
        if let BasisSet::Quadratic = self {
            let mut l = d;
            for k in 0..d {
                for j in k..d {
                    out[(k, l)] += x[j];
                    out[(j, l)] += x[k];
                    l += 1;
                }
            }
        }
        out
    }
}

/// An evaluable gain function (`d × s` at every state).
#[derive(Debug, Clone, PartialEq)]
pub enum GainApproximation {
    Constant(DMatrix<f64>),
    Galerkin {
        basis: BasisSet,
        /// `L × s`; column `j` is `κ_j`.
        coefficients: DMatrix<f64>,
    },
}

impl GainApproximation {
    pub fn evaluate(&self, x: DVectorView<'_, f64>) -> DMatrix<f64> {
        match self {
            GainApproximation::Constant(k) => k.clone(),
            GainApproximation::Galerkin { basis, coefficients } => basis.gradients(x) * coefficients,
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, GainApproximation::Constant(_))
    }
}

/// `gain.evaluate(x)`.
pub fn evaluate_gain(gain: &GainApproximation, x: DVectorView<'_, f64>) -> DMatrix<f64> {
    gain.evaluate(x)
}

/// How the filters compute their gain each step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GainMethod {
    #[default]
    Constant,
    Galerkin(BasisSet),
}

impl GainMethod {
    /// Gain from an ensemble and its prediction deviations `h(Xⁱ) − ĥ`
    /// (`s × N`).
    pub fn compute(&self, ensemble: &Ensemble, deviations: &DMatrix<f64>) -> Result<GainApproximation> {
        match self {
            GainMethod::Constant => constant_gain_from(ensemble, deviations),
            GainMethod::Galerkin(basis) => galerkin_gain_from(ensemble, deviations, *basis),
        }
    }
}

/// Constant gain for the raw observation map.
pub fn constant_gain(ensemble: &Ensemble, map: &dyn ObservationMap) -> Result<GainApproximation> {
    let preds = Predictions::raw(ensemble, map)?;
    constant_gain_from(ensemble, &preds.deviations)
}

/// Galerkin gain for the raw observation map.
pub fn galerkin_gain(ensemble: &Ensemble, map: &dyn ObservationMap, basis: BasisSet) -> Result<GainApproximation> {
    let preds = Predictions::raw(ensemble, map)?;
    galerkin_gain_from(ensemble, &preds.deviations, basis)
}

fn check_deviations(ensemble: &Ensemble, deviations: &DMatrix<f64>) -> Result<()> {
    if deviations.ncols() != ensemble.len() {
        return Err(Error::Dimension {
            expected: ensemble.len(),
            got: deviations.ncols(),
            context: "prediction deviations",
        });
    }
    Ok(())
}

pub fn constant_gain_from(ensemble: &Ensemble, deviations: &DMatrix<f64>) -> Result<GainApproximation> {
    check_deviations(ensemble, deviations)?;
    let n = ensemble.len() as f64;
    Ok(GainApproximation::Constant(
        ensemble.states() * deviations.transpose() / n,
    ))
}

/// Condition number above which the Galerkin matrix is regularized.
pub const CONDITION_LIMIT: f64 = 1e12;

pub fn galerkin_gain_from(
    ensemble: &Ensemble,
    deviations: &DMatrix<f64>,
    basis: BasisSet,
) -> Result<GainApproximation> {
    check_deviations(ensemble, deviations)?;
    let n = ensemble.len();
    let l = basis.len(ensemble.dim());
    if n < l {
        return Err(Error::InvalidModel(format!(
            "galerkin gain needs at least {l} particles, got {n}"
        )));
    }
    let mut a = DMatrix::<f64>::zeros(l, l);
    let mut psi = DMatrix::<f64>::zeros(l, n);
    for i in 0..n {
        let x = ensemble.particle(i);
        let g = basis.gradients(x);
        a += g.transpose() * &g;
        psi.set_column(i, &basis.values(x));
    }
    a /= n as f64;
    let b = psi * deviations.transpose() / n as f64;

    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    let system = if condition > CONDITION_LIMIT {
        let lambda = 1e-8 * a.trace() / l as f64;
        if !(lambda > 0.0 && lambda.is_finite()) {
            return Err(Error::SingularGain { condition });
        }
        &a + DMatrix::identity(l, l) * lambda
    } else {
        a
    };
    let coefficients = system
        .cholesky()
        .map(|c| c.solve(&b))
        .ok_or(Error::SingularGain { condition })?;
    Ok(GainApproximation::Galerkin { basis, coefficients })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{FnMap, LinearMap};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn identity_map(d: usize) -> LinearMap {
        LinearMap {
            matrix: DMatrix::identity(d, d),
        }
    }

    #[test]
    fn constant_gain_small_example() {
        let e = Ensemble::from_scalars(&[1.0, 2.0, 3.0]).unwrap();
        let k = constant_gain(&e, &identity_map(1)).unwrap();
        assert_relative_eq!(k.evaluate(e.particle(0))[(0, 0)], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn identical_particles_have_zero_gain() {
        let e = Ensemble::from_scalars(&[4.0; 5]).unwrap();
        let k = constant_gain(&e, &identity_map(1)).unwrap();
        assert_eq!(k, GainApproximation::Constant(DMatrix::zeros(1, 1)));
    }

    #[test]
    fn galerkin_coordinate_basis_scalar() {
        let e = Ensemble::from_scalars(&[1.0, 2.0, 3.0]).unwrap();
        let k = galerkin_gain(&e, &identity_map(1), BasisSet::Coordinates).unwrap();
        for x in [-5.0, 0.0, 7.0] {
            let at = DVector::from_element(1, x);
            assert_relative_eq!(k.evaluate(at.as_view())[(0, 0)], 2.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn galerkin_quadratic_hand_solve() {
        let e = Ensemble::from_scalars(&[-1.0, 0.0, 1.0]).unwrap();
        let h = FnMap::new(1, |x: DVectorView<'_, f64>| DVector::from_element(1, x[0] * x[0]));
        let k = galerkin_gain(&e, &h, BasisSet::Quadratic).unwrap();
        let GainApproximation::Galerkin { coefficients, .. } = &k else {
            panic!("expected galerkin gain");
        };
        assert_relative_eq!(coefficients[(0, 0)], 0.0, epsilon = 1e-15);
        assert_relative_eq!(coefficients[(1, 0)], 1.0 / 12.0, epsilon = 1e-15);
        let at = DVector::from_element(1, 3.0);
        assert_relative_eq!(evaluate_gain(&k, at.as_view())[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn degenerate_basis_is_singular() {
        let e = Ensemble::from_scalars(&[0.0, 0.0, 0.0]).unwrap();
        // Quadratic gradient 2x vanishes at every particle: A = diag(1, 0).
        let k = galerkin_gain(&e, &identity_map(1), BasisSet::Quadratic).unwrap();
        assert!(k.evaluate(e.particle(0)).iter().all(|v| v.is_finite()));
        assert!(galerkin_gain(&e, &identity_map(1), BasisSet::Coordinates).is_ok());
        let few = Ensemble::from_scalars(&[1.0]).unwrap();
        assert!(galerkin_gain(&few, &identity_map(1), BasisSet::Quadratic).is_err());
    }

    #[test]
    fn quadratic_gradients_match_finite_differences() {
        let x = DVector::from_vec(vec![0.3, -1.2, 2.0]);
        let g = BasisSet::Quadratic.gradients(x.as_view());
        let eps = 1e-6;
        for k in 0..3 {
            let mut up = x.clone();
            let mut down = x.clone();
            up[k] += eps;
            down[k] -= eps;
            let fd =
                (BasisSet::Quadratic.values(up.as_view()) - BasisSet::Quadratic.values(down.as_view())) / (2.0 * eps);
            for l in 0..g.ncols() {
                assert_relative_eq!(g[(k, l)], fd[l], epsilon = 1e-8);
            }
        }
    }

    fn ensemble_strategy() -> impl Strategy<Value = (Ensemble, DMatrix<f64>)> {
        (1usize..4, 1usize..3, 5usize..30).prop_flat_map(|(d, s, n)| {
            (
                prop::collection::vec(-5.0..5.0f64, d * n),
                prop::collection::vec(-2.0..2.0f64, s * d),
            )
                .prop_map(move |(xs, hs)| {
                    (
                        Ensemble::new(DMatrix::from_vec(d, n, xs)).unwrap(),
                        DMatrix::from_vec(s, d, hs),
                    )
                })
        })
    }

    proptest! {
        #[test]
        fn coordinate_galerkin_reproduces_constant_gain((e, h) in ensemble_strategy()) {
            let map = LinearMap { matrix: h };
            let c = constant_gain(&e, &map).unwrap();
            let g = galerkin_gain(&e, &map, BasisSet::Coordinates).unwrap();
            let diff = (c.evaluate(e.particle(0)) - g.evaluate(e.particle(1))).amax();
            prop_assert!(diff < 1e-12);
        }

        #[test]
        fn constant_gain_normal_equation((e, h) in ensemble_strategy()) {
            // E_N[∇ψ·K_j] = E_N[(h_j − ĥ_j) ψ] for ψ = x_k: the gain column is
            // exactly the covariance-like average.
            let map = LinearMap { matrix: h };
            let preds = Predictions::raw(&e, &map).unwrap();
            let k = constant_gain(&e, &map).unwrap().evaluate(e.particle(0));
            let n = e.len() as f64;
            let rhs = e.states() * preds.deviations.transpose() / n;
            prop_assert!((k - rhs).amax() < 1e-12);
        }

        #[test]
        fn constant_gain_is_translation_invariant((e, h) in ensemble_strategy(), shift in -10.0..10.0f64) {
            let map = LinearMap { matrix: h };
            let moved = Ensemble::new(e.states().add_scalar(shift)).unwrap();
            let a = constant_gain(&e, &map).unwrap().evaluate(e.particle(0));
            let b = constant_gain(&moved, &map).unwrap().evaluate(e.particle(0));
            prop_assert!((a - b).amax() < 1e-9);
        }
    }
}
