//! The two scalar-state simulation environments, behavior data generation with the hidden
//! counterfactual table, and policy rollouts with the outcome/harm metrics.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::policy::Policy;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum EnvKind {
    #[default]
    Linear,
    Nonlinear,
}

impl std::str::FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "linear" => Ok(EnvKind::Linear),
            "nonlinear" => Ok(EnvKind::Nonlinear),
            other => Err(Error::Config(format!("unknown environment {other:?}"))),
        }
    }
}

/// Whether the configured noise levels are variances or standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseScale {
    #[default]
    Variance,
    Sd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Transition noise level (omega); `None` uses the environment's default of 0.1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub transition_noise: Option<f64>,
    /// Outcome noise level (nu), shared by both potential outcomes; `None` uses the
    /// environment's default (0.05 linear, 0.1 nonlinear).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub outcome_noise: Option<f64>,
    pub noise_scale: NoiseScale,
    pub initial_mean: f64,
    pub initial_sd: f64,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn linear() -> Self {
        Self {
            kind: EnvKind::Linear,
            transition_noise: None,
            outcome_noise: None,
            noise_scale: NoiseScale::Variance,
            initial_mean: 0.0,
            initial_sd: 1.0,
            horizon: 20,
        }
    }

    pub fn nonlinear() -> Self {
        Self {
            kind: EnvKind::Nonlinear,
            ..Self::linear()
        }
    }

    pub fn of_kind(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Linear => Self::linear(),
            EnvKind::Nonlinear => Self::nonlinear(),
        }
    }

    fn sd(&self, level: f64) -> f64 {
        match self.noise_scale {
            NoiseScale::Variance => level.sqrt(),
            NoiseScale::Sd => level,
        }
    }

    pub fn transition_level(&self) -> f64 {
        self.transition_noise.unwrap_or(0.1)
    }

    pub fn outcome_level(&self) -> f64 {
        self.outcome_noise.unwrap_or(match self.kind {
            EnvKind::Linear => 0.05,
            EnvKind::Nonlinear => 0.1,
        })
    }

    pub fn transition_sd(&self) -> f64 {
        self.sd(self.transition_level())
    }

    pub fn outcome_sd(&self) -> f64 {
        self.sd(self.outcome_level())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.transition_level() > 0.0 && self.outcome_level() > 0.0) {
            return Err(Error::Config("noise levels must be positive".into()));
        }
        if !(self.initial_sd >= 0.0) || !self.initial_mean.is_finite() {
            return Err(Error::Config("initial-state distribution is invalid".into()));
        }
        if self.horizon < 1 {
            return Err(Error::Config("horizon must be at least 1".into()));
        }
        Ok(())
    }

    /// One step given explicit noise draws `omega` (transition) and `nu` (outcome).
    pub fn step_with_noise(&self, x: f64, a: usize, omega: f64, nu: f64) -> (f64, f64, f64) {
        match self.kind {
            EnvKind::Linear => linear_step_with_noise(x, a, omega, nu),
            EnvKind::Nonlinear => nonlinear_step_with_noise(x, a, omega, nu),
        }
    }

    /// One step drawing `omega`, then `nu` from `rng`.
    pub fn step(&self, x: f64, a: usize, rng: &mut impl Rng) -> (f64, f64, f64) {
        let (omega, nu) = self.draw_noise(rng);
        self.step_with_noise(x, a, omega, nu)
    }

    fn draw_noise(&self, rng: &mut impl Rng) -> (f64, f64) {
        let omega: f64 = rng.sample(StandardNormal);
        let nu: f64 = rng.sample(StandardNormal);
        (self.transition_sd() * omega, self.outcome_sd() * nu)
    }
}

impl Default for EnvSpec {
    fn default() -> Self {
        Self::linear()
    }
}

fn linear_outcome(x: f64, a: f64) -> f64 {
    0.3 + 0.4 * x - 0.6 * a * x
}

fn linear_transition(x: f64, a: f64) -> f64 {
    0.8 * x - 0.2 + 0.3 * a
}

fn nonlinear_outcome(x: f64, a: f64) -> f64 {
    let s = x + 0.3 * a;
    0.3 + 0.25 * (x + 0.4 * a).sin() + 0.15 * s * s + 0.2 * a * (1.5 * x).cos() - 0.3 * a
}

fn nonlinear_transition(x: f64, a: f64) -> f64 {
    (0.7 * x + 0.5 * a - 0.25).tanh() + 0.25 * (1.3 * x + 0.5 * a).sin()
}

/// Returns `(next_x, y0, y1)`; the action only affects the transition.
pub fn linear_step_with_noise(x: f64, a: usize, omega: f64, nu: f64) -> (f64, f64, f64) {
    (
        linear_transition(x, a as f64) + omega,
        linear_outcome(x, 0.0) + nu,
        linear_outcome(x, 1.0) + nu,
    )
}

pub fn nonlinear_step_with_noise(x: f64, a: usize, omega: f64, nu: f64) -> (f64, f64, f64) {
    (
        nonlinear_transition(x, a as f64) + omega,
        nonlinear_outcome(x, 0.0) + nu,
        nonlinear_outcome(x, 1.0) + nu,
    )
}

/// Linear environment step with its default noise variances (0.1 transition, 0.05 outcome).
pub fn linear_step(x: f64, a: usize, rng: &mut impl Rng) -> (f64, f64, f64) {
    EnvSpec::linear().step(x, a, rng)
}

/// Nonlinear environment step with both noise variances 0.1.
pub fn nonlinear_step(x: f64, a: usize, rng: &mut impl Rng) -> (f64, f64, f64) {
    EnvSpec::nonlinear().step(x, a, rng)
}

/// Draws the logged action with `P(A = 1 | x) = logistic(0.5 x)`.
pub fn behavior_action(x: f64, rng: &mut impl Rng) -> usize {
    Policy::<f64>::simulation_behavior().select(&[x], rng.random::<f64>())
}

/// SplitMix64 finalizer, used to derive independent seeds for different purposes.
pub fn derive_seed(master: u64, purpose: u64) -> u64 {
    let mut z = master ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Per-trajectory generator: stream `replication * n + individual` of the seed.
pub fn trajectory_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One simulated time step with both potential outcomes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualStep {
    pub x: f64,
    pub a: usize,
    pub y0: f64,
    pub y1: f64,
    pub y: f64,
}

/// Rolls out `steps` time steps from a fresh initial state. Every step draws, in order, the
/// action uniform, the transition noise and the outcome noise, so two policies run on the same
/// stream face identical noise.
pub fn rollout<T: Scalar>(spec: &EnvSpec, policy: &Policy<T>, steps: usize, rng: &mut impl Rng) -> Vec<CounterfactualStep> {
    let z0: f64 = rng.sample(StandardNormal);
    let mut x = spec.initial_mean + spec.initial_sd * z0;
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let u: f64 = rng.random();
        let (omega, nu) = spec.draw_noise(rng);
        let a = policy.select(&[T::of(x)], u);
        let (next, y0, y1) = spec.step_with_noise(x, a, omega, nu);
        out.push(CounterfactualStep {
            x,
            a,
            y0,
            y1,
            y: if a == 1 { y1 } else { y0 },
        });
        x = next;
    }
    out
}

/// Learner-visible data plus the potential outcomes of every cell.
#[derive(Debug, Clone)]
pub struct SimulatedData<T: Scalar> {
    pub dataset: TrajectoryDataset<T>,
    /// `(y0, y1)` per cell, in the dataset's cell order.
    pub counterfactuals: Vec<(f64, f64)>,
}

/// Simulates `n` trajectories of `horizon + 1` steps under `policy` (normally the behavior
/// rule). Individual `i` uses stream `stream_offset + i`.
pub fn generate_dataset<T: Scalar>(
    spec: &EnvSpec,
    n: usize,
    policy: &Policy<T>,
    seed: u64,
    stream_offset: u64,
) -> Result<SimulatedData<T>> {
    spec.validate()?;
    policy.validate()?;
    if n == 0 {
        return Err(Error::Config("need at least one individual".into()));
    }
    if policy.n_actions() != 2 {
        return Err(Error::Config("the simulation environments have two actions".into()));
    }
    let trajectories: Vec<Vec<CounterfactualStep>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, stream_offset + i as u64);
            rollout(spec, policy, spec.horizon + 1, &mut rng)
        })
        .collect();
    let steps = trajectories.iter().flatten();
    let states = steps.clone().map(|s| T::of(s.x)).collect();
    let actions = steps.clone().map(|s| s.a).collect();
    let outcomes = steps.clone().map(|s| T::of(s.y)).collect();
    let counterfactuals = steps.map(|s| (s.y0, s.y1)).collect();
    let dataset = TrajectoryDataset::new(n, spec.horizon, 1, 2, states, actions, outcomes)?;
    Ok(SimulatedData {
        dataset,
        counterfactuals,
    })
}

/// Outcome and harm metrics of one evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalMetrics {
    /// `(N T)^-1 sum_{i,t} gamma^t Y_t(pi)`.
    pub discounted_outcome: f64,
    /// `(N T)^-1 sum_{i,t} (Y_t(0) - Y_t(1))^+` along the policy's trajectories.
    pub average_harm: f64,
    /// As `average_harm`, counting only steps where the policy chose action 1.
    pub average_harm_indicator: f64,
    pub n_individuals: usize,
    pub horizon: usize,
}

impl EvalMetrics {
    /// Size-weighted combination of metrics over disjoint sets of trajectories.
    pub fn merge(&self, other: &EvalMetrics) -> Result<EvalMetrics> {
        if self.horizon != other.horizon {
            return Err(Error::Shape("cannot merge metrics with different horizons".into()));
        }
        let (na, nb) = (self.n_individuals as f64, other.n_individuals as f64);
        let w = |a: f64, b: f64| (a * na + b * nb) / (na + nb);
        Ok(EvalMetrics {
            discounted_outcome: w(self.discounted_outcome, other.discounted_outcome),
            average_harm: w(self.average_harm, other.average_harm),
            average_harm_indicator: w(self.average_harm_indicator, other.average_harm_indicator),
            n_individuals: self.n_individuals + other.n_individuals,
            horizon: self.horizon,
        })
    }
}

/// Metrics over equal-length trajectories.
pub fn metrics_from_rollouts(trajectories: &[Vec<CounterfactualStep>], gamma: f64) -> Result<EvalMetrics> {
    let horizon = trajectories.first().map_or(0, Vec::len);
    if horizon == 0 || trajectories.iter().any(|t| t.len() != horizon) {
        return Err(Error::Shape("trajectories must be nonempty and of equal length".into()));
    }
    let (mut outcome, mut harm, mut harm_ind) = (0.0, 0.0, 0.0);
    for traj in trajectories {
        let mut discount = 1.0;
        for s in traj {
            outcome += discount * s.y;
            let h = (s.y0 - s.y1).max(0.0);
            harm += h;
            if s.a == 1 {
                harm_ind += h;
            }
            discount *= gamma;
        }
    }
    let cells = (trajectories.len() * horizon) as f64;
    Ok(EvalMetrics {
        discounted_outcome: outcome / cells,
        average_harm: harm / cells,
        average_harm_indicator: harm_ind / cells,
        n_individuals: trajectories.len(),
        horizon,
    })
}

/// Rolls `n` fresh trajectories of `horizon` steps under `policy` and scores them. Individual
/// `i` uses stream `stream_offset + i` of `seed`.
pub fn evaluate_policy<T: Scalar>(
    spec: &EnvSpec,
    policy: &Policy<T>,
    n: usize,
    horizon: usize,
    gamma: f64,
    seed: u64,
    stream_offset: u64,
) -> Result<EvalMetrics> {
    spec.validate()?;
    policy.validate()?;
    if n == 0 || horizon == 0 {
        return Err(Error::Config("evaluation needs N >= 1 and T >= 1".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Config(format!("discount must lie in [0, 1], got {gamma}")));
    }
    let trajectories: Vec<Vec<CounterfactualStep>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = trajectory_rng(seed, stream_offset + i as u64);
            rollout(spec, policy, horizon, &mut rng)
        })
        .collect();
    metrics_from_rollouts(&trajectories, gamma)
}
