//! Counterfactual harm under a Gaussian copula, the fitted per-action mean/variance model, and
//! harm-penalized pseudo-utilities.

use serde::{Deserialize, Serialize};

use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::regression::{fit_state_regressor, RegressorConfig, StateRegressor};
use crate::scalar::{normal_cdf, normal_pdf, Scalar};

/// Below this spread the copula difference is treated as deterministic.
pub const DEGENERATE_SPREAD: f64 = 1e-12;

/// Default lower bound on predicted conditional variances.
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-6;

fn check_copula_args<T: Scalar>(sigma_a: T, sigma_ref: T, rho: T) -> Result<()> {
    if !(sigma_a > T::zero()) || !(sigma_ref > T::zero()) {
        return Err(Error::Domain(format!(
            "standard deviations must be positive, got {sigma_a} and {sigma_ref}"
        )));
    }
    if !(rho.abs() <= T::one()) {
        return Err(Error::Domain(format!("copula correlation must lie in [-1, 1], got {rho}")));
    }
    Ok(())
}

/// Standard deviation of `Y(a) - Y(a')`. Written as `(sa - sr)^2 + 2(1 - rho) sa sr` so that
/// `rho = 1` with equal spreads gives exactly zero.
pub fn difference_sd<T: Scalar>(sigma_a: T, sigma_ref: T, rho: T) -> T {
    let d = sigma_a - sigma_ref;
    let var = d * d + T::of(2.0) * (T::one() - rho) * sigma_a * sigma_ref;
    var.max(T::zero()).sqrt()
}

/// `P(Y(a) < Y(a'))` for jointly normal potential outcomes with means `r_a`, `r_ref`, spreads
/// `sigma_a`, `sigma_ref` and correlation `rho`.
pub fn gaussian_copula_harm_rate<T: Scalar>(r_a: T, r_ref: T, sigma_a: T, sigma_ref: T, rho: T) -> Result<T> {
    check_copula_args(sigma_a, sigma_ref, rho)?;
    let delta = r_ref - r_a;
    let sd = difference_sd(sigma_a, sigma_ref, rho);
    if sd < T::of(DEGENERATE_SPREAD) {
        return Ok(if delta > T::zero() {
            T::one()
        } else if delta < T::zero() {
            T::zero()
        } else {
            T::of(0.5)
        });
    }
    Ok(normal_cdf(delta / sd))
}

/// `E[(Y(a') - Y(a))^+]` under the same model.
pub fn gaussian_copula_harm_value<T: Scalar>(r_a: T, r_ref: T, sigma_a: T, sigma_ref: T, rho: T) -> Result<T> {
    check_copula_args(sigma_a, sigma_ref, rho)?;
    let delta = r_ref - r_a;
    let sd = difference_sd(sigma_a, sigma_ref, rho);
    if sd < T::of(DEGENERATE_SPREAD) {
        return Ok(delta.max(T::zero()));
    }
    let z = delta / sd;
    // Clamp tiny negative round-off in the far left tail.
    Ok((delta * normal_cdf(z) + sd * normal_pdf(z)).max(T::zero()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PenaltyKind {
    #[default]
    HarmRate,
    HarmValue,
}

impl std::str::FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "harm-rate" => Ok(PenaltyKind::HarmRate),
            "harm-value" => Ok(PenaltyKind::HarmValue),
            other => Err(Error::Config(format!("unknown penalty kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyConfig {
    pub beta: f64,
    #[serde(default)]
    pub kind: PenaltyKind,
}

impl PenaltyConfig {
    pub fn harm_rate(beta: f64) -> Self {
        Self {
            beta,
            kind: PenaltyKind::HarmRate,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::Config(format!("beta must be finite and >= 0, got {}", self.beta)));
        }
        Ok(())
    }
}

/// What harm is measured against.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "")]
pub enum Reference<T: Scalar> {
    Action { action: usize },
    /// A deterministic reference policy; harm at `x` is measured against `policy(x)`.
    Policy { policy: Box<Policy<T>> },
}

impl<T: Scalar> Reference<T> {
    pub fn action(action: usize) -> Self {
        Reference::Action { action }
    }

    pub fn action_at(&self, x: &[T]) -> usize {
        match self {
            Reference::Action { action } => *action,
            Reference::Policy { policy } => policy.point_action(x).expect("validated deterministic"),
        }
    }

    fn validate(&self, n_actions: usize) -> Result<()> {
        match self {
            Reference::Action { action } if *action >= n_actions => Err(Error::Domain(format!(
                "reference action {action} outside [0, {n_actions})"
            ))),
            Reference::Policy { policy } => {
                policy.validate()?;
                if matches!(**policy, Policy::Uniform { .. } | Policy::Logistic { .. }) {
                    return Err(Error::Domain("reference policy must be deterministic".into()));
                }
                if policy.n_actions() != n_actions {
                    return Err(Error::Domain(format!(
                        "reference policy has {} actions, data has {n_actions}",
                        policy.n_actions()
                    )));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }
}

/// Per-action conditional mean and variance regressions plus the copula correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct HarmModel<T: Scalar> {
    pub mean_models: Vec<StateRegressor<T>>,
    pub var_models: Vec<StateRegressor<T>>,
    pub rho: T,
    pub reference: Reference<T>,
    pub variance_floor: T,
    state_dim: usize,
}

impl<T: Scalar> HarmModel<T> {
    pub fn n_actions(&self) -> usize {
        self.mean_models.len()
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn mean(&self, x: &[T], a: usize) -> T {
        self.mean_models[a].predict_state(x)
    }

    pub fn sigma(&self, x: &[T], a: usize) -> T {
        self.var_models[a].predict_state(x).max(self.variance_floor).sqrt()
    }

    /// Estimated `P(Y(a) < Y(a_ref) | x)`; exactly zero when `a == a_ref`.
    pub fn harm_rate(&self, x: &[T], a: usize, a_ref: usize) -> T {
        if a == a_ref {
            return T::zero();
        }
        gaussian_copula_harm_rate(self.mean(x, a), self.mean(x, a_ref), self.sigma(x, a), self.sigma(x, a_ref), self.rho)
            .expect("fitted model has positive spreads and valid rho")
    }

    /// Estimated `E[(Y(a_ref) - Y(a))^+ | x]`; exactly zero when `a == a_ref`.
    pub fn harm_value(&self, x: &[T], a: usize, a_ref: usize) -> T {
        if a == a_ref {
            return T::zero();
        }
        gaussian_copula_harm_value(self.mean(x, a), self.mean(x, a_ref), self.sigma(x, a), self.sigma(x, a_ref), self.rho)
            .expect("fitted model has positive spreads and valid rho")
    }

    /// Harm of action `a` at `x` relative to the model's reference.
    pub fn harm(&self, x: &[T], a: usize, kind: PenaltyKind) -> T {
        let a_ref = self.reference.action_at(x);
        match kind {
            PenaltyKind::HarmRate => self.harm_rate(x, a, a_ref),
            PenaltyKind::HarmValue => self.harm_value(x, a, a_ref),
        }
    }

    pub fn with_rho(mut self, rho: T) -> Result<Self> {
        if !(rho.abs() <= T::one()) {
            return Err(Error::Domain(format!("copula correlation must lie in [-1, 1], got {rho}")));
        }
        self.rho = rho;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean_models.is_empty() || self.mean_models.len() != self.var_models.len() {
            return Err(Error::Shape("harm model needs one mean and one variance model per action".into()));
        }
        if !(self.rho.abs() <= T::one()) {
            return Err(Error::Domain(format!("copula correlation must lie in [-1, 1], got {}", self.rho)));
        }
        if !(self.variance_floor > T::zero()) {
            return Err(Error::Domain("variance floor must be positive".into()));
        }
        if self
            .mean_models
            .iter()
            .chain(&self.var_models)
            .any(|m| m.input_dim() != self.state_dim)
        {
            return Err(Error::Shape("regressors disagree on the state dimension".into()));
        }
        self.reference.validate(self.n_actions())
    }
}

/// Fits the per-action mean `r(x, a)` on all rows with `A = a`, then the conditional variance
/// by regressing the squared residuals on `x` over the same rows.
pub fn fit_harm_model<T: Scalar>(
    data: &TrajectoryDataset<T>,
    rho: T,
    reference: Reference<T>,
    regressor: &RegressorConfig,
) -> Result<HarmModel<T>> {
    if !(rho.abs() <= T::one()) {
        return Err(Error::Domain(format!("copula correlation must lie in [-1, 1], got {rho}")));
    }
    let k = data.n_actions();
    let p = data.state_dim();
    reference.validate(k)?;
    let counts = data.action_counts();
    for (a, &c) in counts.iter().enumerate() {
        let label = data.action_labels().get(a).cloned().unwrap_or_else(|| a.to_string());
        if c == 0 {
            return Err(Error::Coverage(format!("action {a} ({label}) never appears in the data")));
        }
        if c == 1 {
            return Err(Error::Coverage(format!(
                "action {a} ({label}) appears only once; its variance cannot be estimated"
            )));
        }
    }
    let mut mean_models = Vec::with_capacity(k);
    let mut var_models = Vec::with_capacity(k);
    for a in 0..k {
        let rows: Vec<usize> = (0..data.n_cells()).filter(|&c| data.actions()[c] == a).collect();
        let states: Vec<T> = rows.iter().flat_map(|&c| data.state_at(c).iter().copied()).collect();
        let y: Vec<T> = rows.iter().map(|&c| data.outcomes()[c]).collect();
        let mean = fit_state_regressor(regressor, &states, p, &y)?;
        let sq_resid: Vec<T> = rows
            .iter()
            .zip(&y)
            .map(|(&c, &yy)| {
                let r = yy - mean.predict_state(data.state_at(c));
                r * r
            })
            .collect();
        var_models.push(fit_state_regressor(regressor, &states, p, &sq_resid)?);
        mean_models.push(mean);
    }
    Ok(HarmModel {
        mean_models,
        var_models,
        rho,
        reference,
        variance_floor: T::of(DEFAULT_VARIANCE_FLOOR),
        state_dim: p,
    })
}

/// Pseudo-utilities `Y - beta * harm(X; A, reference)` for every cell, laid out like the
/// dataset's outcomes.
pub fn transform_utilities<T: Scalar>(
    data: &TrajectoryDataset<T>,
    model: &HarmModel<T>,
    penalty: &PenaltyConfig,
) -> Result<Vec<T>> {
    penalty.validate()?;
    if model.state_dim() != data.state_dim() || model.n_actions() != data.n_actions() {
        return Err(Error::Shape(format!(
            "harm model is for {}-dim states with {} actions, data has {} and {}",
            model.state_dim(),
            model.n_actions(),
            data.state_dim(),
            data.n_actions()
        )));
    }
    let beta = T::of(penalty.beta);
    Ok((0..data.n_cells())
        .map(|c| {
            let y = data.outcomes()[c];
            if penalty.beta == 0.0 {
                return y;
            }
            y - beta * model.harm(data.state_at(c), data.actions()[c], penalty.kind)
        })
        .collect())
}

/// Harm rate of the action a policy picks relative to the action a reference policy picks.
pub fn policy_relative_harm_rate<T: Scalar>(model: &HarmModel<T>, x: &[T], pi_action: usize, ref_action: usize) -> T {
    model.harm_rate(x, pi_action, ref_action)
}
