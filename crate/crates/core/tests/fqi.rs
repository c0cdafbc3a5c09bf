use harmrl::data::pool_transitions;
use harmrl::envs::{generate_dataset, EnvSpec};
use harmrl::fqi::{
    action_gap_of_values, bellman_targets, empirical_action_gap, fqi_train, fqi_train_observed, greedy_action,
    greedy_from_values, ConvergenceNorm, FqiConfig, FqiMode, GreedyPolicy, QBackendConfig, QFunction,
};
use harmrl::regression::{Basis, FeatureMap, LinearModel};
use harmrl::{Error, Policy, TransitionBatch};
use proptest::prelude::*;

/// Tabular MDP with transition probabilities in quarters, so a batch with four rows per
/// (state, action) represents the expectation exactly. Rewards stay within [0, 0.3] so that
/// `0.9^100 * |Q*|` is below 1e-4 and 100 iterations from zero suffice.
struct Tabular {
    n_states: usize,
    reward: Vec<[f64; 2]>,
    /// `next[s][a]` lists four successor states.
    next: Vec<[[usize; 4]; 2]>,
}

impl Tabular {
    fn three_state() -> Self {
        Tabular {
            n_states: 3,
            reward: vec![[0.1, 0.3], [0.0, 0.25], [0.2, 0.05]],
            next: vec![
                [[0, 0, 1, 2], [1, 1, 1, 2]],
                [[2, 2, 0, 1], [0, 1, 1, 1]],
                [[2, 2, 2, 2], [0, 0, 1, 2]],
            ],
        }
    }

    fn deterministic_two_state() -> Self {
        Tabular {
            n_states: 2,
            reward: vec![[0.0, 1.0], [0.5, 0.2]],
            next: vec![[[0; 4], [1; 4]], [[1; 4], [0; 4]]],
        }
    }

    fn one_hot(&self, s: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.n_states];
        v[s] = 1.0;
        v
    }

    fn batch(&self, shift: f64) -> TransitionBatch<f64> {
        let (mut st, mut ac, mut ut, mut nx) = (vec![], vec![], vec![], vec![]);
        for s in 0..self.n_states {
            for a in 0..2 {
                for &s2 in &self.next[s][a] {
                    st.extend(self.one_hot(s));
                    ac.push(a);
                    ut.push(self.reward[s][a] + shift);
                    nx.extend(self.one_hot(s2));
                }
            }
        }
        TransitionBatch::from_columns(self.n_states, 2, st, ac, ut, nx).unwrap()
    }

    fn value_iteration(&self, gamma: f64) -> Vec<[f64; 2]> {
        let mut q = vec![[0.0f64; 2]; self.n_states];
        loop {
            let v: Vec<f64> = q.iter().map(|r| r[0].max(r[1])).collect();
            let mut change: f64 = 0.0;
            let next: Vec<[f64; 2]> = (0..self.n_states)
                .map(|s| {
                    let mut row = [0.0; 2];
                    for a in 0..2 {
                        let ev = self.next[s][a].iter().map(|&s2| v[s2]).sum::<f64>() / 4.0;
                        row[a] = self.reward[s][a] + gamma * ev;
                        change = change.max((row[a] - q[s][a]).abs());
                    }
                    row
                })
                .collect();
            q = next;
            if change < 1e-15 {
                return q;
            }
        }
    }

    fn sup_distance(&self, q: &QFunction<f64>, star: &[[f64; 2]]) -> f64 {
        (0..self.n_states)
            .flat_map(|s| (0..2).map(move |a| (s, a)))
            .map(|(s, a)| (q.q(&self.one_hot(s), a) - star[s][a]).abs())
            .fold(0.0, f64::max)
    }
}

fn tabular_config(gamma: f64, iterations: usize) -> FqiConfig {
    FqiConfig {
        iterations,
        gamma,
        backend: QBackendConfig::Linear { basis: Basis::Identity, ridge: 0.0 },
        ..FqiConfig::linear(gamma)
    }
}

#[test]
fn deterministic_tabular_matches_value_iteration() {
    let mdp = Tabular::deterministic_two_state();
    // The default early-stop tolerance (1e-5) would halt about 1e-5 away from the fixed point.
    let cfg = FqiConfig { convergence_tol: 1e-12, ..tabular_config(0.5, 50) };
    let q = fqi_train(&mdp.batch(0.0), &cfg).unwrap();
    let d = mdp.sup_distance(&q, &mdp.value_iteration(0.5));
    assert!(d <= 1e-6, "{d}");
}

#[test]
fn stochastic_tabular_matches_value_iteration() {
    let mdp = Tabular::three_state();
    let q = fqi_train(&mdp.batch(0.0), &tabular_config(0.9, 100)).unwrap();
    let d = mdp.sup_distance(&q, &mdp.value_iteration(0.9));
    assert!(d <= 1e-4, "{d}");
}

#[test]
fn distance_to_fixed_point_is_nonincreasing() {
    let mdp = Tabular::three_state();
    let star = mdp.value_iteration(0.9);
    let mut cfg = tabular_config(0.9, 200);
    cfg.convergence_tol = 1e-14;
    let mut dists = vec![];
    fqi_train_observed(&mdp.batch(0.0), &cfg, |_, q| dists.push(mdp.sup_distance(q, &star))).unwrap();
    assert!(dists.len() > 10);
    assert!(dists.windows(2).all(|w| w[1] <= w[0] + 1e-9));
}

#[test]
fn constant_utility_shift_moves_q_but_not_the_policy() {
    let mdp = Tabular::three_state();
    let gamma = 0.9;
    let mut cfg = tabular_config(gamma, 400);
    cfg.convergence_tol = 1e-13;
    let base = fqi_train(&mdp.batch(0.0), &cfg).unwrap();
    let shifted = fqi_train(&mdp.batch(2.0), &cfg).unwrap();
    for s in 0..3 {
        let x = mdp.one_hot(s);
        for a in 0..2 {
            assert!((shifted.q(&x, a) - base.q(&x, a) - 2.0 / (1.0 - gamma)).abs() < 1e-8);
        }
        assert_eq!(greedy_action(&base, &x, 0), greedy_action(&shifted, &x, 0));
    }
}

#[test]
fn bellman_targets_basic_cases() {
    let batch = TransitionBatch::from_columns(1, 2, vec![0.2, -0.4], vec![0, 1], vec![0.5, -1.0], vec![1.0, 1.0]).unwrap();
    let fm = FeatureMap::new(Basis::Identity, 1, 2).unwrap();
    let q_prev = QFunction::new(
        harmrl::fqi::QBackend::Linear(LinearModel { weights: vec![1.0, 3.0], feature_map: fm.clone(), ridge: 0.0 }),
        0.9,
    );
    let t: Vec<f64> = bellman_targets(&batch, &q_prev).unwrap();
    assert!((t[0] - 3.2).abs() < 1e-12);
    let zero = QFunction::new(harmrl::fqi::QBackend::Linear(LinearModel::zeros(fm, 0.0)), 0.9);
    assert_eq!(bellman_targets(&batch, &zero).unwrap(), vec![0.5, -1.0]);
    let wrong = TransitionBatch::from_columns(2, 2, vec![0.0; 2], vec![0], vec![0.0], vec![0.0; 2]).unwrap();
    assert!(bellman_targets(&wrong, &zero).is_err());
}

fn linear_batch(n: usize, seed: u64) -> TransitionBatch<f64> {
    let sim = generate_dataset::<f64>(&EnvSpec::linear(), n, &Policy::simulation_behavior(), seed, 0).unwrap();
    pool_transitions(&sim.dataset, sim.dataset.outcomes()).unwrap()
}

#[test]
fn one_myopic_iteration_is_plain_regression() {
    let batch = linear_batch(50, 1);
    let q = fqi_train(&batch, &FqiConfig { iterations: 1, ..FqiConfig::linear(0.0) }).unwrap();
    let fm = FeatureMap::new(Basis::default(), 1, 2).unwrap();
    let direct = LinearModel::fit(fm, 1e-6, batch.states(), batch.actions(), batch.utilities()).unwrap();
    assert_eq!(q.parameters(), direct.weights);
}

#[test]
fn myopic_fit_does_not_depend_on_iterations() {
    let batch = linear_batch(50, 2);
    let one = fqi_train(&batch, &FqiConfig { iterations: 1, ..FqiConfig::linear(0.0) }).unwrap();
    let many = fqi_train(&batch, &FqiConfig { iterations: 30, ..FqiConfig::linear(0.0) }).unwrap();
    for (a, b) in one.parameters().iter().zip(many.parameters()) {
        assert!((a - b).abs() <= 1e-10);
    }
}

#[test]
fn q_respects_the_contraction_bound() {
    let batch = linear_batch(1000, 3);
    let gamma = 0.9;
    let q = fqi_train(&batch, &FqiConfig::linear(gamma)).unwrap();
    let r_max = batch.utilities().iter().fold(0.0f64, |m, r| m.max(r.abs()));
    let bound = 1.1 * r_max / (1.0 - gamma);
    for k in 0..batch.len() {
        for a in 0..2 {
            assert!(q.q(batch.state(k), a).abs() <= bound);
        }
    }
}

#[test]
fn batched_mode_needs_enough_rows_and_runs() {
    let batch = linear_batch(20, 4);
    let mut cfg = FqiConfig::linear(0.9);
    cfg.mode = FqiMode::Batched;
    cfg.iterations = 10;
    let q = fqi_train(&batch, &cfg).unwrap();
    assert!(q.parameters().iter().all(|v| v.is_finite()));
    cfg.iterations = batch.len() + 1;
    assert!(matches!(fqi_train(&batch, &cfg), Err(Error::Shape(_))));
}

#[test]
fn network_backend_trains_and_is_deterministic() {
    let batch = linear_batch(60, 5);
    let mut cfg = FqiConfig::mlp(0.9);
    cfg.seed = 42;
    let a = fqi_train(&batch, &cfg).unwrap();
    let b = fqi_train(&batch, &cfg).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    assert!(a.parameters().iter().all(|v| v.is_finite()));
    let back: QFunction<f64> = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
    assert_eq!(a, back);
}

#[test]
fn non_finite_utilities_report_the_iteration() {
    let batch = linear_batch(10, 6);
    let mut utilities = batch.utilities().to_vec();
    utilities[3] = f64::NAN;
    let bad = batch.with_utilities(utilities).unwrap();
    assert!(matches!(
        fqi_train(&bad, &FqiConfig::linear(0.9)),
        Err(Error::QDivergence { iteration: 1 })
    ));
}

#[test]
fn convergence_norms() {
    assert_eq!(ConvergenceNorm::MaxAbs.distance(&[1.0, -2.0], &[0.5, 0.0]), 2.0);
    assert_eq!(ConvergenceNorm::SumAbs.distance(&[1.0, -2.0], &[0.5, 0.0]), 2.5);
}

#[test]
fn greedy_examples() {
    assert_eq!(greedy_from_values(&[1.0, 2.0], 0), 1);
    assert_eq!(greedy_from_values(&[2.0, 2.0], 0), 0);
    assert_eq!(greedy_from_values(&[2.0, 2.0, 1.0], 2), 0);
    assert_eq!(greedy_from_values(&[2.0, 2.0 + 1e-13], 0), 0);
    let policy = GreedyPolicy { q: fqi_train(&linear_batch(30, 7), &FqiConfig::linear(0.9)).unwrap(), reference: 0 };
    let json = serde_json::to_string(&Policy::Greedy(policy.clone())).unwrap();
    let back: Policy<f64> = serde_json::from_str(&json).unwrap();
    assert_eq!(back.point_action(&[0.4]), Some(policy.action(&[0.4])));
}

#[test]
fn action_gap_examples() {
    assert_eq!(action_gap_of_values(&[1.0, 3.0]), 2.0);
    assert_eq!(action_gap_of_values(&[2.0, 2.0]), 0.0);
    let q = fqi_train(&linear_batch(40, 8), &FqiConfig::linear(0.9)).unwrap();
    let states: Vec<f64> = (0..50).map(|k| -2.5 + 0.1 * k as f64).collect();
    let report = empirical_action_gap(&q, &states, &[0.01, 0.1, 1.0, 100.0]).unwrap();
    assert_eq!(report.gaps.len(), 50);
    assert!(report.gaps.iter().all(|&g| g >= 0.0));
    assert!(report.margin.windows(2).all(|w| w[1].1 >= w[0].1));
    assert!(empirical_action_gap(&q, &[], &[0.1]).is_err());
}

proptest! {
    #[test]
    fn greedy_matches_a_scan(values in prop::collection::vec(-3i32..3, 2..6), reference in 0usize..6) {
        let values: Vec<f64> = values.into_iter().map(f64::from).collect();
        let reference = reference % values.len();
        let best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let expected = if values[reference] == best {
            reference
        } else {
            values.iter().position(|&v| v == best).unwrap()
        };
        prop_assert_eq!(greedy_from_values(&values, reference), expected);
    }

    #[test]
    fn gap_matches_pairwise_maximum(values in prop::collection::vec(-5.0f64..5.0, 2..6)) {
        let best_idx = (0..values.len()).max_by(|&a, &b| values[a].total_cmp(&values[b])).unwrap();
        let second = (0..values.len()).filter(|&a| a != best_idx).map(|a| values[a]).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(action_gap_of_values(&values), values[best_idx] - second);
    }
}
