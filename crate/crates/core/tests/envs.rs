use harmrl::envs::{
    behavior_action, evaluate_policy, generate_dataset, linear_step, linear_step_with_noise, metrics_from_rollouts,
    nonlinear_step, nonlinear_step_with_noise, rollout, trajectory_rng, CounterfactualStep, EnvSpec, NoiseScale,
};
use harmrl::Policy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Sample mean and variance of `next_x` over `n` draws, with the standard errors of both.
fn moments(step: fn(f64, usize, &mut ChaCha8Rng) -> (f64, f64, f64), x: f64, a: usize, n: usize) -> (f64, f64, f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let draws: Vec<f64> = (0..n).map(|_| step(x, a, &mut rng).0).collect();
    let nf = n as f64;
    let mean = draws.iter().sum::<f64>() / nf;
    let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let m4 = draws.iter().map(|d| (d - mean).powi(4)).sum::<f64>() / nf;
    (mean, var, (var / nf).sqrt(), ((m4 - var * var) / nf).sqrt())
}

#[test]
fn linear_transition_moments() {
    for (x, a) in [(0.5, 0), (-1.2, 1)] {
        let (mean, var, se_mean, se_var) = moments(linear_step, x, a, 1_000_000);
        let expected = 0.8 * x - 0.2 + 0.3 * a as f64;
        assert!((mean - expected).abs() < 3.0 * se_mean, "mean {mean} vs {expected}");
        assert!((var - 0.1).abs() < 3.0 * se_var, "var {var}");
    }
}

#[test]
fn nonlinear_transition_moments() {
    for (x, a) in [(0.0, 0), (0.9, 1)] {
        let (mean, var, se_mean, se_var) = moments(nonlinear_step, x, a, 1_000_000);
        let af = a as f64;
        let expected = (0.7 * x + 0.5 * af - 0.25).tanh() + 0.25 * (1.3 * x + 0.5 * af).sin();
        assert!((mean - expected).abs() < 3.0 * se_mean);
        assert!((var - 0.1).abs() < 3.0 * se_var);
    }
}

#[test]
fn noiseless_arithmetic() {
    let (nx, y0, y1) = linear_step_with_noise(0.0, 1, 0.0, 0.0);
    assert!((nx - 0.1).abs() < 1e-15);
    assert!((y0 - 0.3).abs() < 1e-15 && (y1 - 0.3).abs() < 1e-15);
    let (_, y0, y1) = linear_step_with_noise(0.5, 0, 0.0, 0.0);
    assert!((y0 - 0.5).abs() < 1e-15 && (y1 - 0.2).abs() < 1e-15);
    assert!((y0 - y1 - 0.3).abs() < 1e-15);
    let (nx, y0, _) = nonlinear_step_with_noise(0.0, 0, 0.0, 0.0);
    assert!((nx - (-0.244_918_662_403_709_1)).abs() < 1e-12);
    assert_eq!(y0, 0.3);
}

#[test]
fn behavior_frequency_matches_logistic() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let n = 100_000;
    let ones = (0..n).filter(|_| behavior_action(1.0, &mut rng) == 1).count();
    let p = 1.0 / (1.0 + (-0.5f64).exp());
    let freq = ones as f64 / n as f64;
    assert!((freq - p).abs() < 3.0 * (p * (1.0 - p) / n as f64).sqrt());
    let zero = (0..n).filter(|_| behavior_action(0.0, &mut rng) == 1).count() as f64 / n as f64;
    assert!((zero - 0.5).abs() < 3.0 * (0.25 / n as f64).sqrt());
    assert!((0..1000).all(|_| behavior_action(60.0, &mut rng) == 1));
}

#[test]
fn dataset_shapes_consistency_and_determinism() {
    let spec = EnvSpec::linear();
    let a = generate_dataset::<f64>(&spec, 30, &Policy::simulation_behavior(), 5, 0).unwrap();
    let b = generate_dataset::<f64>(&spec, 30, &Policy::simulation_behavior(), 5, 0).unwrap();
    assert_eq!(a.dataset, b.dataset);
    assert_eq!(a.counterfactuals, b.counterfactuals);
    let d = &a.dataset;
    assert_eq!((d.n_individuals(), d.horizon(), d.n_cells()), (30, 20, 30 * 21));
    assert_eq!(a.counterfactuals.len(), d.n_cells());
    for c in 0..d.n_cells() {
        let (y0, y1) = a.counterfactuals[c];
        let y = if d.actions()[c] == 1 { y1 } else { y0 };
        assert_eq!(d.outcomes()[c], y);
        // Shared outcome noise: the contrast is exactly the noiseless 0.6 x (up to rounding).
        assert!((y0 - y1 - 0.6 * d.states()[c]).abs() < 1e-12);
    }
    let other = generate_dataset::<f64>(&spec, 30, &Policy::simulation_behavior(), 6, 0).unwrap();
    assert_ne!(other.dataset, a.dataset);
}

#[test]
fn individual_streams_are_independent_of_n() {
    let spec = EnvSpec::nonlinear();
    let small = generate_dataset::<f64>(&spec, 3, &Policy::simulation_behavior(), 8, 10).unwrap();
    let large = generate_dataset::<f64>(&spec, 6, &Policy::simulation_behavior(), 8, 10).unwrap();
    let cells = small.dataset.n_cells();
    assert_eq!(small.dataset.outcomes(), &large.dataset.outcomes()[..cells]);
}

#[test]
fn metrics_of_zero_outcomes_vanish() {
    let step = CounterfactualStep { x: 1.0, a: 1, y0: 0.0, y1: 0.0, y: 0.0 };
    let m = metrics_from_rollouts(&[vec![step; 5], vec![step; 5]], 0.9).unwrap();
    assert_eq!((m.discounted_outcome, m.average_harm, m.average_harm_indicator), (0.0, 0.0, 0.0));
}

#[test]
fn linear_harm_term_is_positive_part_of_contrast() {
    let spec = EnvSpec::linear();
    let mut rng = trajectory_rng(3, 0);
    let traj = rollout(&spec, &Policy::<f64>::Uniform { n_actions: 2 }, 200, &mut rng);
    let m = metrics_from_rollouts(&[traj.clone()], 0.9).unwrap();
    let expected = traj.iter().map(|s| 0.6 * s.x.max(0.0)).sum::<f64>() / 200.0;
    assert!((m.average_harm - expected).abs() < 1e-12);
    let expected_ind = traj.iter().filter(|s| s.a == 1).map(|s| 0.6 * s.x.max(0.0)).sum::<f64>() / 200.0;
    assert!((m.average_harm_indicator - expected_ind).abs() < 1e-12);
    let disc = traj.iter().enumerate().map(|(t, s)| 0.9f64.powi(t as i32) * s.y).sum::<f64>() / 200.0;
    assert!((m.discounted_outcome - disc).abs() < 1e-12);
}

#[test]
fn metrics_merge_is_size_weighted() {
    let spec = EnvSpec::linear();
    let policy = Policy::<f64>::simulation_behavior();
    let whole = evaluate_policy(&spec, &policy, 30, 20, 0.9, 12, 0).unwrap();
    let first = evaluate_policy(&spec, &policy, 10, 20, 0.9, 12, 0).unwrap();
    let rest = evaluate_policy(&spec, &policy, 20, 20, 0.9, 12, 10).unwrap();
    let merged = first.merge(&rest).unwrap();
    assert!((merged.discounted_outcome - whole.discounted_outcome).abs() < 1e-12);
    assert!((merged.average_harm - whole.average_harm).abs() < 1e-12);
    assert!((merged.average_harm_indicator - whole.average_harm_indicator).abs() < 1e-12);
    assert_eq!(merged.n_individuals, 30);
}

#[test]
fn common_random_numbers_across_policies() {
    // Two fixed policies see the same initial states and noise, so their first outcomes
    // differ exactly by the treatment contrast.
    let spec = EnvSpec::linear();
    let t0 = rollout(&spec, &Policy::<f64>::Fixed { action: 0, n_actions: 2 }, 1, &mut trajectory_rng(1, 7));
    let t1 = rollout(&spec, &Policy::<f64>::Fixed { action: 1, n_actions: 2 }, 1, &mut trajectory_rng(1, 7));
    assert_eq!(t0[0].x, t1[0].x);
    assert_eq!((t0[0].y0, t0[0].y1), (t1[0].y0, t1[0].y1));
}

#[test]
fn noise_scale_switch() {
    let mut spec = EnvSpec::linear();
    assert!((spec.outcome_sd() - 0.05f64.sqrt()).abs() < 1e-15);
    spec.noise_scale = NoiseScale::Sd;
    assert_eq!(spec.outcome_sd(), 0.05);
    spec.outcome_noise = Some(-1.0);
    assert!(spec.validate().is_err());
}

#[test]
fn evaluation_rejects_bad_arguments() {
    let spec = EnvSpec::linear();
    let p = Policy::<f64>::Uniform { n_actions: 2 };
    assert!(evaluate_policy(&spec, &p, 0, 20, 0.9, 0, 0).is_err());
    assert!(evaluate_policy(&spec, &p, 5, 20, 1.5, 0, 0).is_err());
    assert!(generate_dataset(&spec, 5, &Policy::<f64>::Uniform { n_actions: 3 }, 0, 0).is_err());
}
