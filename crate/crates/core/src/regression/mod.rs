//! Supervised regression backends: exact least squares over a feature map and a one-hidden-layer
//! network trained with Adam.

pub mod features;
pub mod linear;
pub mod mlp;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

pub use features::{Basis, FeatureMap};
pub use linear::{fit_linear_least_squares, min_gram_eigenvalue, LinearModel, DEFAULT_RIDGE};
pub use mlp::{fit_mlp_regressor, Adam, MlpConfig, MlpModel, MlpTrainer};

/// A fitted model mapping a state vector to one of several outputs.
pub trait Predictor<T: Scalar> {
    fn input_dim(&self) -> usize;

    fn n_outputs(&self) -> usize;

    /// Prediction for one input row and output index. Dimensions are not checked.
    fn predict_one(&self, x: &[T], output: usize) -> T;

    /// Flat copy of every trainable parameter.
    fn parameters(&self) -> Vec<T>;

    /// Batched prediction over row-major inputs, one output index per row.
    fn predict(&self, inputs: &[T], outputs: &[usize]) -> Result<Vec<T>> {
        let d = self.input_dim();
        if inputs.len() != outputs.len() * d {
            return Err(Error::Shape(format!(
                "inputs have {} values, expected {} rows x {d}",
                inputs.len(),
                outputs.len()
            )));
        }
        if let Some(&k) = outputs.iter().find(|&&k| k >= self.n_outputs()) {
            return Err(Error::Shape(format!("output {k} outside [0, {})", self.n_outputs())));
        }
        Ok(outputs
            .iter()
            .enumerate()
            .map(|(r, &k)| self.predict_one(&inputs[r * d..(r + 1) * d], k))
            .collect())
    }
}

/// How to fit a scalar function of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RegressorConfig {
    Linear {
        #[serde(default)]
        basis: Basis,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    Mlp(MlpConfig),
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

impl Default for RegressorConfig {
    fn default() -> Self {
        RegressorConfig::Linear {
            basis: Basis::default(),
            ridge: DEFAULT_RIDGE,
        }
    }
}

/// A fitted scalar function of the state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "")]
pub enum StateRegressor<T: Scalar> {
    Linear(LinearModel<T>),
    Mlp(MlpModel<T>),
}

impl<T: Scalar> StateRegressor<T> {
    pub fn predict_state(&self, x: &[T]) -> T {
        match self {
            StateRegressor::Linear(m) => m.predict_one(x, 0),
            StateRegressor::Mlp(m) => m.predict_one(x, 0),
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            StateRegressor::Linear(m) => m.input_dim(),
            StateRegressor::Mlp(m) => m.input_dim(),
        }
    }
}

/// Regresses `y` on states (row-major, `n x state_dim`).
pub fn fit_state_regressor<T: Scalar>(
    config: &RegressorConfig,
    states: &[T],
    state_dim: usize,
    y: &[T],
) -> Result<StateRegressor<T>> {
    match config {
        RegressorConfig::Linear { basis, ridge } => {
            let fm = FeatureMap::new(*basis, state_dim, 1)?;
            let actions = vec![0; y.len()];
            Ok(StateRegressor::Linear(LinearModel::fit(fm, T::of(*ridge), states, &actions, y)?))
        }
        RegressorConfig::Mlp(cfg) => Ok(StateRegressor::Mlp(fit_mlp_regressor(states, state_dim, y, cfg)?)),
    }
}
