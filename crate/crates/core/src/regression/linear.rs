use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::Predictor;
use crate::error::{Error, Result};
use crate::linalg::{symmetric_eigenvalues, Cholesky};
use crate::scalar::Scalar;

/// Ridge applied when none is configured.
pub const DEFAULT_RIDGE: f64 = 1e-6;

/// Gram matrix `X^T X` and moment vector `X^T y` of a row-major `n x d` design.
pub fn normal_equations<T: Scalar>(x: &[T], d: usize, y: &[T]) -> (Vec<T>, Vec<T>) {
    let n = y.len();
    let mut gram = vec![T::zero(); d * d];
    let mut moment = vec![T::zero(); d];
    for k in 0..n {
        let row = &x[k * d..(k + 1) * d];
        for i in 0..d {
            let ri = row[i];
            if ri == T::zero() {
                continue;
            }
            moment[i] += ri * y[k];
            for j in i..d {
                gram[i * d + j] += ri * row[j];
            }
        }
    }
    for i in 0..d {
        for j in 0..i {
            gram[i * d + j] = gram[j * d + i];
        }
    }
    (gram, moment)
}

/// Minimizes `sum_i (w . x_i - y_i)^2 + ridge * |w|^2` through the normal equations.
pub fn fit_linear_least_squares<T: Scalar>(x: &[T], d: usize, y: &[T], ridge: T) -> Result<Vec<T>> {
    let n = y.len();
    if n == 0 || d == 0 || x.len() != n * d {
        return Err(Error::Shape(format!(
            "design has {} entries, expected n x d = {n} x {d} with n, d >= 1",
            x.len()
        )));
    }
    if ridge < T::zero() || !ridge.is_finite() {
        return Err(Error::Domain(format!("ridge must be finite and >= 0, got {ridge}")));
    }
    let (mut gram, moment) = normal_equations(x, d, y);
    for i in 0..d {
        gram[i * d + i] += ridge;
    }
    let chol = Cholesky::factor(&gram, d).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot } if ridge == T::zero() => Error::RankDeficient { pivot, dim: d },
        other => other,
    })?;
    let w = chol.solve(&moment);
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("least-squares solution is not finite".into()));
    }
    Ok(w)
}

/// Smallest eigenvalue of the empirical second-moment matrix `X^T X / n`; a feature-coverage
/// diagnostic, not enforced.
pub fn min_gram_eigenvalue<T: Scalar>(x: &[T], d: usize, n: usize) -> T {
    let (gram, _) = normal_equations(x, d, &vec![T::zero(); n]);
    let scale = T::one() / T::of_usize(n.max(1));
    let gram: Vec<T> = gram.into_iter().map(|g| g * scale).collect();
    symmetric_eigenvalues(&gram, d)[0]
}

/// `w . phi(x, a)` over a [`FeatureMap`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct LinearModel<T: Scalar> {
    pub weights: Vec<T>,
    pub feature_map: FeatureMap,
    pub ridge: T,
}

impl<T: Scalar> LinearModel<T> {
    pub fn zeros(feature_map: FeatureMap, ridge: T) -> Self {
        Self {
            weights: vec![T::zero(); feature_map.dim()],
            feature_map,
            ridge,
        }
    }

    /// Fits the weights on paired states (row-major, `n x p`), actions and targets.
    pub fn fit(feature_map: FeatureMap, ridge: T, states: &[T], actions: &[usize], targets: &[T]) -> Result<Self> {
        if states.len() != actions.len() * feature_map.state_dim() || targets.len() != actions.len() {
            return Err(Error::Shape("states, actions and targets disagree in length".into()));
        }
        let design = feature_map.design(states, actions);
        let weights = fit_linear_least_squares(&design, feature_map.dim(), targets, ridge)?;
        Ok(Self {
            weights,
            feature_map,
            ridge,
        })
    }

    /// Prediction for every action at state `x`.
    pub fn predict_all(&self, x: &[T]) -> Vec<T> {
        let b = self.feature_map.block_dim();
        let mut basis = vec![T::zero(); b];
        self.feature_map.state_basis(x, &mut basis);
        (0..self.feature_map.n_actions())
            .map(|a| {
                self.weights[a * b..(a + 1) * b]
                    .iter()
                    .zip(&basis)
                    .map(|(&w, &f)| w * f)
                    .sum()
            })
            .collect()
    }
}

impl<T: Scalar> Predictor<T> for LinearModel<T> {
    fn input_dim(&self) -> usize {
        self.feature_map.state_dim()
    }

    fn n_outputs(&self) -> usize {
        self.feature_map.n_actions()
    }

    fn predict_one(&self, x: &[T], output: usize) -> T {
        let b = self.feature_map.block_dim();
        let mut basis = vec![T::zero(); b];
        self.feature_map.state_basis(x, &mut basis);
        self.weights[output * b..(output + 1) * b]
            .iter()
            .zip(&basis)
            .map(|(&w, &f)| w * f)
            .sum()
    }

    fn parameters(&self) -> Vec<T> {
        self.weights.clone()
    }
}
