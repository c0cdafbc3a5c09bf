//! Fitted Q-iteration over pooled transitions, greedy policy extraction and action-gap
//! diagnostics.

use serde::{Deserialize, Serialize};

use crate::data::TransitionBatch;
use crate::error::{Error, Result};
use crate::regression::{Basis, FeatureMap, LinearModel, MlpConfig, MlpModel, MlpTrainer, Predictor, DEFAULT_RIDGE};
use crate::scalar::Scalar;

/// Two Q-values closer than this are treated as tied.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", bound = "")]
pub enum QBackend<T: Scalar> {
    Linear(LinearModel<T>),
    /// One output per action.
    Mlp(MlpModel<T>),
}

/// Action-value function over a finite action set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct QFunction<T: Scalar> {
    pub backend: QBackend<T>,
    n_actions: usize,
    pub gamma: T,
}

impl<T: Scalar> QFunction<T> {
    pub fn new(backend: QBackend<T>, gamma: T) -> Self {
        let n_actions = match &backend {
            QBackend::Linear(m) => m.n_outputs(),
            QBackend::Mlp(m) => m.output_dim(),
        };
        Self {
            backend,
            n_actions,
            gamma,
        }
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn state_dim(&self) -> usize {
        match &self.backend {
            QBackend::Linear(m) => m.input_dim(),
            QBackend::Mlp(m) => m.input_dim(),
        }
    }

    pub fn q_values(&self, x: &[T]) -> Vec<T> {
        match &self.backend {
            QBackend::Linear(m) => m.predict_all(x),
            QBackend::Mlp(m) => m.predict_all(x),
        }
    }

    pub fn q(&self, x: &[T], a: usize) -> T {
        match &self.backend {
            QBackend::Linear(m) => m.predict_one(x, a),
            QBackend::Mlp(m) => m.predict_one(x, a),
        }
    }

    pub fn max_q(&self, x: &[T]) -> T {
        self.q_values(x).into_iter().fold(T::neg_infinity(), T::max)
    }

    pub fn parameters(&self) -> Vec<T> {
        match &self.backend {
            QBackend::Linear(m) => m.parameters(),
            QBackend::Mlp(m) => m.parameters(),
        }
    }
}

/// Index of the largest value; ties (within [`TIE_TOLERANCE`]) go to `reference`, then to the
/// lowest index.
pub fn greedy_from_values<T: Scalar>(values: &[T], reference: usize) -> usize {
    let best = values.iter().copied().fold(T::neg_infinity(), T::max);
    let tol = T::of(TIE_TOLERANCE);
    let tied = |a: usize| best - values[a] <= tol;
    if reference < values.len() && tied(reference) {
        return reference;
    }
    (0..values.len()).find(|&a| tied(a)).unwrap_or(0)
}

pub fn greedy_action<T: Scalar>(q: &QFunction<T>, x: &[T], reference: usize) -> usize {
    greedy_from_values(&q.q_values(x), reference)
}

/// `x -> argmax_a q(x, a)` with ties broken toward a reference action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct GreedyPolicy<T: Scalar> {
    pub q: QFunction<T>,
    pub reference: usize,
}

impl<T: Scalar> GreedyPolicy<T> {
    pub fn action(&self, x: &[T]) -> usize {
        greedy_action(&self.q, x, self.reference)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum FqiMode {
    /// Iteration `k` fits only on the `k`-th of `K` disjoint, index-ordered chunks.
    Batched,
    /// Every iteration fits on all transitions against the previous iterate.
    #[default]
    Full,
}

impl std::str::FromStr for FqiMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "batched" => Ok(FqiMode::Batched),
            "full" => Ok(FqiMode::Full),
            other => Err(Error::Config(format!("unknown FQI mode {other:?} (expected batched or full)"))),
        }
    }
}

/// Norm of the parameter change used for early stopping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ConvergenceNorm {
    #[default]
    MaxAbs,
    SumAbs,
}

impl ConvergenceNorm {
    pub fn distance<T: Scalar>(self, a: &[T], b: &[T]) -> T {
        let diffs = a.iter().zip(b).map(|(&u, &v)| (u - v).abs());
        match self {
            ConvergenceNorm::MaxAbs => diffs.fold(T::zero(), T::max),
            ConvergenceNorm::SumAbs => diffs.sum(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum QBackendConfig {
    Linear {
        #[serde(default)]
        basis: Basis,
        #[serde(default = "default_ridge")]
        ridge: f64,
    },
    /// The network is warm-started across iterations; each iteration trains
    /// `epochs_per_iteration` epochs against a frozen target network.
    Mlp {
        #[serde(default = "default_epochs_per_iteration")]
        epochs_per_iteration: usize,
        #[serde(default)]
        network: MlpConfig,
    },
}

fn default_ridge() -> f64 {
    DEFAULT_RIDGE
}

fn default_epochs_per_iteration() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FqiConfig {
    /// Number of Bellman iterations `K` (target refreshes for the network backend).
    pub iterations: usize,
    pub mode: FqiMode,
    pub convergence_tol: f64,
    pub convergence_norm: ConvergenceNorm,
    pub gamma: f64,
    pub seed: u64,
    pub backend: QBackendConfig,
}

impl FqiConfig {
    /// Least squares on a quadratic basis, 50 iterations.
    pub fn linear(gamma: f64) -> Self {
        Self {
            iterations: 50,
            mode: FqiMode::Full,
            convergence_tol: 1e-5,
            convergence_norm: ConvergenceNorm::MaxAbs,
            gamma,
            backend: QBackendConfig::Linear {
                basis: Basis::default(),
                ridge: DEFAULT_RIDGE,
            },
            seed: 0,
        }
    }

    /// 64-unit network, Adam at 1e-3, batches of 64, 50 epochs with the target refreshed every
    /// 10 epochs.
    pub fn mlp(gamma: f64) -> Self {
        Self {
            iterations: 5,
            backend: QBackendConfig::Mlp {
                network: MlpConfig::default(),
                epochs_per_iteration: 10,
            },
            ..Self::linear(gamma)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Config("FQI needs at least one iteration".into()));
        }
        if !(self.convergence_tol > 0.0) {
            return Err(Error::Config("convergence tolerance must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("discount must lie in [0, 1), got {}", self.gamma)));
        }
        if let QBackendConfig::Mlp { epochs_per_iteration: 0, .. } = self.backend {
            return Err(Error::Config("epochs_per_iteration must be >= 1".into()));
        }
        Ok(())
    }
}

impl Default for FqiConfig {
    fn default() -> Self {
        Self::mlp(0.9)
    }
}

/// `R_i + gamma * max_a q_prev(X'_i, a)` for every transition.
pub fn bellman_targets<T: Scalar>(batch: &TransitionBatch<T>, q_prev: &QFunction<T>) -> Result<Vec<T>> {
    if q_prev.state_dim() != batch.state_dim() || q_prev.n_actions() != batch.n_actions() {
        return Err(Error::Shape(format!(
            "Q-function is {}-dim with {} actions, batch is {}-dim with {} actions",
            q_prev.state_dim(),
            q_prev.n_actions(),
            batch.state_dim(),
            batch.n_actions()
        )));
    }
    Ok(targets_for(batch, Some(q_prev), &(0..batch.len()).collect::<Vec<_>>()))
}

fn targets_for<T: Scalar>(batch: &TransitionBatch<T>, q_prev: Option<&QFunction<T>>, rows: &[usize]) -> Vec<T> {
    rows.iter()
        .map(|&k| match q_prev {
            Some(q) => batch.utility(k) + q.gamma * q.max_q(batch.next_state(k)),
            None => batch.utility(k),
        })
        .collect()
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct FqiReport<T: Scalar> {
    pub q: QFunction<T>,
    pub iterations_run: usize,
    pub converged: bool,
    pub last_change: T,
}

pub fn fqi_train<T: Scalar>(batch: &TransitionBatch<T>, config: &FqiConfig) -> Result<QFunction<T>> {
    Ok(fqi_train_observed(batch, config, |_, _| {})?.q)
}

fn chunks(n: usize, k: usize) -> Vec<std::ops::Range<usize>> {
    let (base, extra) = (n / k, n % k);
    let mut start = 0;
    (0..k)
        .map(|i| {
            let len = base + usize::from(i < extra);
            let r = start..start + len;
            start += len;
            r
        })
        .collect()
}

/// Runs fitted Q-iteration, calling `observer(k, &Q_k)` after every iteration `k >= 1`.
pub fn fqi_train_observed<T: Scalar>(
    batch: &TransitionBatch<T>,
    config: &FqiConfig,
    mut observer: impl FnMut(usize, &QFunction<T>),
) -> Result<FqiReport<T>> {
    config.validate()?;
    let n = batch.len();
    if n == 0 {
        return Err(Error::Shape("transition batch is empty".into()));
    }
    if config.mode == FqiMode::Batched && n < config.iterations {
        return Err(Error::Shape(format!(
            "batched mode needs at least K = {} transitions, got {n}",
            config.iterations
        )));
    }
    let gamma = T::of(config.gamma);
    let tol = T::of(config.convergence_tol);
    let p = batch.state_dim();
    let splits = match config.mode {
        FqiMode::Batched => chunks(n, config.iterations),
        FqiMode::Full => vec![0..n; config.iterations],
    };

    let mut trainer = match &config.backend {
        QBackendConfig::Mlp { network, .. } => {
            let net = MlpConfig {
                seed: config.seed,
                ..network.clone()
            };
            Some(MlpTrainer::new(p, batch.n_actions(), &net)?)
        }
        QBackendConfig::Linear { .. } => None,
    };

    let mut previous: Option<QFunction<T>> = None;
    let mut last_change = T::infinity();
    let mut converged = false;
    let mut iterations_run = 0;
    for (k, split) in splits.into_iter().enumerate() {
        let rows: Vec<usize> = split.collect();
        let targets = targets_for(batch, previous.as_ref(), &rows);
        if targets.iter().any(|t| !t.is_finite()) {
            return Err(Error::QDivergence { iteration: k + 1 });
        }
        let states: Vec<T> = rows.iter().flat_map(|&r| batch.state(r).iter().copied()).collect();
        let actions: Vec<usize> = rows.iter().map(|&r| batch.action(r)).collect();
        let backend = match (&config.backend, trainer.as_mut()) {
            (QBackendConfig::Linear { basis, ridge }, _) => {
                let fm = FeatureMap::new(*basis, p, batch.n_actions())?;
                QBackend::Linear(LinearModel::fit(fm, T::of(*ridge), &states, &actions, &targets)?)
            }
            (QBackendConfig::Mlp { epochs_per_iteration, .. }, Some(tr)) => {
                tr.train(&states, &actions, &targets, *epochs_per_iteration)
                    .map_err(|e| match e {
                        Error::Divergence { .. } => Error::QDivergence { iteration: k + 1 },
                        other => other,
                    })?;
                QBackend::Mlp(tr.model().clone())
            }
            (QBackendConfig::Mlp { .. }, None) => unreachable!("trainer built for network backend"),
        };
        let q = QFunction::new(backend, gamma);
        let params = q.parameters();
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::QDivergence { iteration: k + 1 });
        }
        let prev_params = previous
            .as_ref()
            .map(|pq| pq.parameters())
            .unwrap_or_else(|| initial_parameters(&q));
        last_change = config.convergence_norm.distance(&params, &prev_params);
        iterations_run = k + 1;
        observer(iterations_run, &q);
        previous = Some(q);
        log::debug!("fqi iteration {iterations_run}: parameter change {last_change}");
        if last_change < tol {
            converged = true;
            break;
        }
    }
    Ok(FqiReport {
        q: previous.expect("at least one iteration ran"),
        iterations_run,
        converged,
        last_change,
    })
}

/// Parameters of the zero function `Q_0` in the backend's parameterization: zero weights for
/// least squares; for the network there is no zero-weight equivalent of a freshly initialized
/// net, so the first iteration is compared against zeros as well.
fn initial_parameters<T: Scalar>(q: &QFunction<T>) -> Vec<T> {
    vec![T::zero(); q.parameters().len()]
}

/// Per-state action gap `best - second best` and its margin profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "")]
pub struct ActionGapReport<T: Scalar> {
    pub gaps: Vec<T>,
    /// `(q, value)` pairs for q in 0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.
    pub quantiles: Vec<(f64, T)>,
    /// `(t, fraction of states with 0 < gap <= t)`.
    pub margin: Vec<(T, f64)>,
}

pub fn action_gap_of_values<T: Scalar>(values: &[T]) -> T {
    let mut best = T::neg_infinity();
    let mut second = T::neg_infinity();
    for &v in values {
        if v > best {
            second = best;
            best = v;
        } else if v > second {
            second = v;
        }
    }
    best - second
}

/// Empirical action gaps of `q` over `states` (row-major, `m x p`), with margin fractions at
/// each threshold in `thresholds`.
pub fn empirical_action_gap<T: Scalar>(q: &QFunction<T>, states: &[T], thresholds: &[T]) -> Result<ActionGapReport<T>> {
    let p = q.state_dim();
    if states.is_empty() || states.len() % p != 0 {
        return Err(Error::Shape(format!("states must be a nonempty m x {p} array")));
    }
    if q.n_actions() < 2 {
        return Err(Error::Shape("action gap needs at least two actions".into()));
    }
    let gaps: Vec<T> = states.chunks(p).map(|x| action_gap_of_values(&q.q_values(x))).collect();
    let mut sorted = gaps.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite gaps"));
    let m = sorted.len();
    let quantiles = [0.0, 0.1, 0.25, 0.5, 0.75, 0.9, 1.0]
        .iter()
        .map(|&qq| {
            let pos = qq * (m - 1) as f64;
            let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
            let w = T::of(pos - lo as f64);
            (qq, sorted[lo] + (sorted[hi] - sorted[lo]) * w)
        })
        .collect();
    let margin = thresholds
        .iter()
        .map(|&t| {
            let c = gaps.iter().filter(|&&g| g > T::zero() && g <= t).count();
            (t, c as f64 / m as f64)
        })
        .collect();
    Ok(ActionGapReport { gaps, quantiles, margin })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant_q(values: [f64; 2]) -> QFunction<f64> {
        // Identity basis over a constant 1-dim state: weights are the Q-values at x = 1.
        let fm = FeatureMap::new(Basis::Identity, 1, 2).unwrap();
        QFunction::new(
            QBackend::Linear(LinearModel {
                weights: values.to_vec(),
                feature_map: fm,
                ridge: 0.0,
            }),
            0.9,
        )
    }

    #[test]
    fn greedy_picks_max_and_breaks_ties() {
        assert_eq!(greedy_action(&constant_q([1.0, 2.0]), &[1.0], 0), 1);
        assert_eq!(greedy_action(&constant_q([2.0, 2.0]), &[1.0], 0), 0);
        assert_eq!(greedy_action(&constant_q([2.0, 2.0]), &[1.0], 1), 1);
        assert_eq!(greedy_from_values(&[3.0, 5.0, 5.0], 0), 1);
    }

    #[test]
    fn gaps() {
        let r = empirical_action_gap(&constant_q([1.0, 3.0]), &[1.0], &[0.5, 2.0]).unwrap();
        assert_eq!(r.gaps, vec![2.0]);
        assert_eq!(r.margin, vec![(0.5, 0.0), (2.0, 1.0)]);
        let tie = empirical_action_gap(&constant_q([2.0, 2.0]), &[1.0], &[1.0]).unwrap();
        assert_eq!(tie.gaps, vec![0.0]);
        assert_eq!(tie.margin, vec![(1.0, 0.0)]);
    }

    #[test]
    fn bellman_target_arithmetic() {
        let batch = TransitionBatch::from_columns(1, 2, vec![1.0], vec![0], vec![0.5], vec![1.0]).unwrap();
        let t = bellman_targets(&batch, &constant_q([1.0, 3.0])).unwrap();
        assert!((t[0] - 3.2).abs() < 1e-12);
        let zero = constant_q([0.0, 0.0]);
        assert_eq!(bellman_targets(&batch, &zero).unwrap(), vec![0.5]);
        let myopic = QFunction { gamma: 0.0, ..constant_q([1.0, 3.0]) };
        assert_eq!(bellman_targets(&batch, &myopic).unwrap(), vec![0.5]);
    }

    #[test]
    fn chunking_is_exhaustive_and_ordered() {
        let c = chunks(10, 3);
        assert_eq!(c, vec![0..4, 4..7, 7..10]);
    }

    #[test]
    fn config_validation() {
        let mut c = FqiConfig::linear(0.9);
        c.iterations = 0;
        assert!(c.validate().is_err());
        assert!(FqiConfig::linear(1.0).validate().is_err());
        assert!("full".parse::<FqiMode>().is_ok() && "x".parse::<FqiMode>().is_err());
    }
}
