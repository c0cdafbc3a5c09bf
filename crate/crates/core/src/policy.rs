//! Decision rules mapping a state to an action (or an action distribution).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fqi::GreedyPolicy;
use crate::scalar::{logistic, Scalar};

/// Serializable policy. Every variant can draw an action from a caller-supplied uniform
/// `u in [0, 1)`, so rollouts consume the same random stream whatever policy is evaluated.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "")]
pub enum Policy<T: Scalar> {
    /// Argmax of a learned Q-function.
    Greedy(GreedyPolicy<T>),
    /// Always the same action.
    Fixed { action: usize, n_actions: usize },
    /// Uniform over all actions.
    Uniform { n_actions: usize },
    /// Binary rule `P(A = 1 | x) = logistic(intercept + slope * x_0)`.
    Logistic { intercept: T, slope: T },
}

impl<T: Scalar> Policy<T> {
    /// The simulation behavior rule `P(A = 1 | x) = 1 / (1 + exp(-0.5 x))`.
    pub fn simulation_behavior() -> Self {
        Policy::Logistic {
            intercept: T::zero(),
            slope: T::of(0.5),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            Policy::Greedy(g) => g.q.n_actions(),
            Policy::Fixed { n_actions, .. } | Policy::Uniform { n_actions } => *n_actions,
            Policy::Logistic { .. } => 2,
        }
    }

    pub fn probabilities(&self, x: &[T]) -> Vec<T> {
        let n = self.n_actions();
        match self {
            Policy::Uniform { n_actions } => vec![T::one() / T::of_usize(*n_actions); n],
            Policy::Logistic { intercept, slope } => {
                let p1 = logistic(*intercept + *slope * x[0]);
                vec![T::one() - p1, p1]
            }
            _ => {
                let mut p = vec![T::zero(); n];
                p[self.point_action(x).expect("deterministic variant")] = T::one();
                p
            }
        }
    }

    /// The chosen action of a deterministic policy, `None` for stochastic ones.
    pub fn point_action(&self, x: &[T]) -> Option<usize> {
        match self {
            Policy::Greedy(g) => Some(g.action(x)),
            Policy::Fixed { action, .. } => Some(*action),
            _ => None,
        }
    }

    /// Inverse-CDF draw from the action distribution using the uniform `u`.
    pub fn select(&self, x: &[T], u: f64) -> usize {
        if let Some(a) = self.point_action(x) {
            return a;
        }
        match self {
            // Compare against P(A = 1) directly so the draw is exactly Bernoulli(p1).
            Policy::Logistic { intercept, slope } => {
                usize::from(u < logistic(*intercept + *slope * x[0]).as_f64())
            }
            Policy::Uniform { n_actions } => ((u * *n_actions as f64) as usize).min(n_actions - 1),
            _ => unreachable!("deterministic variants handled above"),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Policy::Fixed { action, n_actions } if action >= n_actions => {
                Err(Error::Domain(format!("fixed action {action} outside [0, {n_actions})")))
            }
            Policy::Uniform { n_actions } | Policy::Fixed { n_actions, .. } if *n_actions < 1 => {
                Err(Error::Domain("policy needs at least one action".into()))
            }
            _ => Ok(()),
        }
    }
}
