//! Behavior-policy estimation and step-wise weighted importance sampling for logged data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::TrajectoryDataset;
use crate::error::{Error, Result};
use crate::harm::{HarmModel, PenaltyKind};
use crate::linalg::Cholesky;
use crate::policy::Policy;
use crate::scalar::Scalar;

pub const DEFAULT_PROBABILITY_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    /// Marginal action frequencies, ignoring the state.
    #[default]
    EmpiricalFrequency,
    /// Multinomial logistic regression on `[1, x]` with action 0 as the baseline class.
    Multinomial,
}

impl std::str::FromStr for BehaviorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "empirical-frequency" => Ok(BehaviorKind::EmpiricalFrequency),
            "multinomial" => Ok(BehaviorKind::Multinomial),
            other => Err(Error::Config(format!("unknown behavior model {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "")]
pub enum BehaviorParams<T: Scalar> {
    EmpiricalFrequency { frequencies: Vec<T> },
    /// Row `k - 1` holds `[intercept, slopes...]` for action `k >= 1`.
    Multinomial { coefficients: Vec<Vec<T>> },
}

/// Estimated logging policy `pi_b(a | x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct BehaviorModel<T: Scalar> {
    pub params: BehaviorParams<T>,
    pub n_actions: usize,
    pub state_dim: usize,
    pub probability_floor: T,
}

impl<T: Scalar> BehaviorModel<T> {
    pub fn kind(&self) -> BehaviorKind {
        match self.params {
            BehaviorParams::EmpiricalFrequency { .. } => BehaviorKind::EmpiricalFrequency,
            BehaviorParams::Multinomial { .. } => BehaviorKind::Multinomial,
        }
    }

    fn raw_probabilities(&self, x: &[T]) -> Vec<T> {
        match &self.params {
            BehaviorParams::EmpiricalFrequency { frequencies } => frequencies.clone(),
            BehaviorParams::Multinomial { coefficients } => softmax_probabilities(coefficients, x),
        }
    }

    /// Probabilities at `x`, mixed with the uniform distribution so that each is at least the
    /// floor and they still sum to one: `p' = floor + (1 - K floor) p`.
    pub fn probabilities(&self, x: &[T]) -> Vec<T> {
        let k = T::of_usize(self.n_actions);
        let floor = self.probability_floor;
        let scale = T::one() - k * floor;
        self.raw_probabilities(x).into_iter().map(|p| floor + scale * p).collect()
    }

    pub fn probability(&self, x: &[T], a: usize) -> T {
        self.probabilities(x)[a]
    }

    pub fn with_probability_floor(mut self, floor: T) -> Result<Self> {
        if !(floor >= T::zero()) || !(T::of_usize(self.n_actions) * floor < T::one()) {
            return Err(Error::Domain(format!(
                "probability floor {floor} must lie in [0, 1/{})",
                self.n_actions
            )));
        }
        self.probability_floor = floor;
        Ok(self)
    }
}

fn softmax_probabilities<T: Scalar>(coefficients: &[Vec<T>], x: &[T]) -> Vec<T> {
    let mut logits = vec![T::zero()];
    for c in coefficients {
        let mut z = c[0];
        for (w, &v) in c[1..].iter().zip(x) {
            z += *w * v;
        }
        logits.push(z);
    }
    let m = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - m).exp()).collect();
    let total: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Fits `pi_b` on every logged (state, action) cell.
pub fn estimate_behavior_policy<T: Scalar>(data: &TrajectoryDataset<T>, kind: BehaviorKind) -> Result<BehaviorModel<T>> {
    let k = data.n_actions();
    let counts = data.action_counts();
    if let Some(a) = counts.iter().position(|&c| c == 0) {
        let label = data.action_labels().get(a).cloned().unwrap_or_else(|| a.to_string());
        return Err(Error::Coverage(format!("action {a} ({label}) is never logged")));
    }
    let params = match kind {
        BehaviorKind::EmpiricalFrequency => {
            let total = T::of_usize(data.n_cells());
            BehaviorParams::EmpiricalFrequency {
                frequencies: counts.iter().map(|&c| T::of_usize(c) / total).collect(),
            }
        }
        BehaviorKind::Multinomial => BehaviorParams::Multinomial {
            coefficients: fit_multinomial(data.states(), data.state_dim(), data.actions(), k)?,
        },
    };
    Ok(BehaviorModel {
        params,
        n_actions: k,
        state_dim: data.state_dim(),
        probability_floor: T::of(DEFAULT_PROBABILITY_FLOOR),
    })
}

/// Newton iterations for multinomial logistic regression with a tiny ridge for stability under
/// separation.
fn fit_multinomial<T: Scalar>(states: &[T], p: usize, actions: &[usize], k: usize) -> Result<Vec<Vec<T>>> {
    let q = p + 1;
    let dim = (k - 1) * q;
    let ridge = T::of(1e-8) * T::of_usize(actions.len());
    let mut beta = vec![T::zero(); dim];
    let unpack = |b: &[T]| b.chunks(q).map(<[T]>::to_vec).collect::<Vec<_>>();
    let mut features = vec![T::one(); q];
    for _ in 0..100 {
        let coef = unpack(&beta);
        let mut grad = vec![T::zero(); dim];
        let mut hess = vec![T::zero(); dim * dim];
        for (row, &a) in actions.iter().enumerate() {
            let x = &states[row * p..(row + 1) * p];
            features[1..].copy_from_slice(x);
            let probs = softmax_probabilities(&coef, x);
            for j in 1..k {
                let resid = T::of(f64::from(u8::from(a == j))) - probs[j];
                for u in 0..q {
                    grad[(j - 1) * q + u] += resid * features[u];
                }
                for l in 1..k {
                    let w = probs[j] * (T::of(f64::from(u8::from(j == l))) - probs[l]);
                    for u in 0..q {
                        for v in 0..q {
                            hess[((j - 1) * q + u) * dim + (l - 1) * q + v] += w * features[u] * features[v];
                        }
                    }
                }
            }
        }
        for d in 0..dim {
            grad[d] -= ridge * beta[d];
            hess[d * dim + d] += ridge;
        }
        let step = Cholesky::factor(&hess, dim)?.solve(&grad);
        let size = step.iter().fold(T::zero(), |m, s| m.max(s.abs()));
        for (b, s) in beta.iter_mut().zip(&step) {
            *b += *s;
        }
        if !size.is_finite() {
            return Err(Error::Divergence { epoch: 0 });
        }
        if size < T::of(1e-10) {
            break;
        }
    }
    Ok(unpack(&beta))
}

/// A WIS estimate and how many logged cells matched the target policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WisEstimate {
    pub value: f64,
    pub matched: usize,
    pub total: usize,
}

impl WisEstimate {
    pub fn matched_fraction(&self) -> f64 {
        self.matched as f64 / self.total as f64
    }
}

fn check_inputs<T: Scalar>(data: &TrajectoryDataset<T>, policy: &Policy<T>, behavior: &BehaviorModel<T>) -> Result<()> {
    if policy.n_actions() != data.n_actions() || behavior.n_actions != data.n_actions() {
        return Err(Error::Shape(format!(
            "policy ({}), behavior model ({}) and data ({}) disagree on the number of actions",
            policy.n_actions(),
            behavior.n_actions,
            data.n_actions()
        )));
    }
    if behavior.state_dim != data.state_dim() {
        return Err(Error::Shape("behavior model and data disagree on the state dimension".into()));
    }
    Ok(())
}

/// `sum w s / sum w` with `w = 1{A = pi(X)} / pi_b(A | X)`, pooled over every cell. `signal`
/// receives the cell index and the target action there.
///
/// A stochastic target uses `w = pi(A | X) / pi_b(A | X)` instead, which reduces to the
/// indicator form for deterministic rules; its signal is evaluated at the logged action.
pub fn wis_estimate<T: Scalar>(
    data: &TrajectoryDataset<T>,
    policy: &Policy<T>,
    behavior: &BehaviorModel<T>,
    mut signal: impl FnMut(usize, usize) -> T,
) -> Result<WisEstimate> {
    check_inputs(data, policy, behavior)?;
    // Accumulating deviations from the first matched signal keeps a constant signal exact.
    let (mut num, mut den, mut matched) = (T::zero(), T::zero(), 0usize);
    let mut anchor = None;
    for c in 0..data.n_cells() {
        let x = data.state_at(c);
        let a = data.actions()[c];
        let p_target = match policy.point_action(x) {
            Some(target) if target == a => T::one(),
            Some(_) => continue,
            None => policy.probabilities(x)[a],
        };
        if p_target <= T::zero() {
            continue;
        }
        let w = p_target / behavior.probability(x, a);
        let value = signal(c, a);
        let base = *anchor.get_or_insert(value);
        num += w * (value - base);
        den += w;
        matched += 1;
    }
    if matched == 0 {
        return Err(Error::NoOverlap);
    }
    Ok(WisEstimate {
        value: (anchor.expect("at least one match") + num / den).as_f64(),
        matched,
        total: data.n_cells(),
    })
}

pub fn wis_outcome<T: Scalar>(data: &TrajectoryDataset<T>, policy: &Policy<T>, behavior: &BehaviorModel<T>) -> Result<WisEstimate> {
    wis_estimate(data, policy, behavior, |c, _| data.outcomes()[c])
}

/// WIS of the estimated harm rate of the target action relative to the model's reference.
pub fn wis_harm<T: Scalar>(
    data: &TrajectoryDataset<T>,
    policy: &Policy<T>,
    behavior: &BehaviorModel<T>,
    harm_model: &HarmModel<T>,
) -> Result<WisEstimate> {
    wis_harm_of_kind(data, policy, behavior, harm_model, PenaltyKind::HarmRate)
}

pub fn wis_harm_of_kind<T: Scalar>(
    data: &TrajectoryDataset<T>,
    policy: &Policy<T>,
    behavior: &BehaviorModel<T>,
    harm_model: &HarmModel<T>,
    kind: PenaltyKind,
) -> Result<WisEstimate> {
    if harm_model.state_dim() != data.state_dim() || harm_model.n_actions() != data.n_actions() {
        return Err(Error::Shape("harm model does not match the data".into()));
    }
    wis_estimate(data, policy, behavior, |c, a| harm_model.harm(data.state_at(c), a, kind))
}

/// Bootstrap standard error of `statistic`, resampling individuals with replacement.
pub fn bootstrap_se<T: Scalar>(
    data: &TrajectoryDataset<T>,
    replicates: usize,
    seed: u64,
    mut statistic: impl FnMut(&TrajectoryDataset<T>) -> Result<f64>,
) -> Result<f64> {
    if replicates < 2 {
        return Err(Error::Config("bootstrap needs at least two replicates".into()));
    }
    let n = data.n_individuals();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut values = Vec::with_capacity(replicates);
    for _ in 0..replicates {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        values.push(statistic(&data.select_individuals(&idx)?)?);
    }
    let mean = values.iter().sum::<f64>() / replicates as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (replicates - 1) as f64;
    Ok(var.sqrt())
}
