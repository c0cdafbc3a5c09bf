//! Counterfactually safe offline reinforcement learning.
//!
//! Harm of an action relative to a reference action is the probability (or expected size) of
//! its potential outcome falling below the reference's, identified under a Gaussian copula
//! from per-action conditional means and variances. Observed outcomes are penalized by the
//! estimated harm and fed to fitted Q-iteration; learned policies are scored on simulated
//! environments with known counterfactuals or by weighted importance sampling on logged data.
//!
//! Numerical code is generic over [`Scalar`] (`f32` or `f64`); the aliases at the crate root
//! fix it to `f64`.

pub mod data;
pub mod envs;
pub mod error;
pub mod experiment;
pub mod fqi;
pub mod harm;
pub mod linalg;
pub mod ope;
pub mod policy;
pub mod regression;
pub mod scalar;

pub use data::{
    load_longitudinal_csv, pool_transitions, read_longitudinal_csv, save_longitudinal_csv, write_longitudinal_csv,
    ActionMapping, ColumnRule, CsvSchema, TrajectoryDataset, TransitionBatch, ValueGroup,
};
pub use envs::{
    behavior_action, evaluate_policy, generate_dataset, linear_step, nonlinear_step, EnvKind, EnvSpec, EvalMetrics,
    NoiseScale, SimulatedData,
};
pub use error::{Error, Result};
pub use experiment::{run_experiment, summarize_replications, ExperimentConfig, ExperimentResult, Method};
pub use fqi::{fqi_train, ConvergenceNorm, FqiConfig, FqiMode, GreedyPolicy, QBackendConfig, QFunction};
pub use harm::{
    fit_harm_model, gaussian_copula_harm_rate, gaussian_copula_harm_value, policy_relative_harm_rate,
    transform_utilities, HarmModel, PenaltyConfig, PenaltyKind, Reference,
};
pub use ope::{estimate_behavior_policy, wis_harm, wis_outcome, BehaviorKind, BehaviorModel, WisEstimate};
pub use policy::Policy;
pub use regression::{Basis, FeatureMap, LinearModel, MlpConfig, MlpModel, Predictor, RegressorConfig};
pub use scalar::Scalar;

pub type Dataset = TrajectoryDataset<f64>;
pub type Transitions = TransitionBatch<f64>;
pub type Harm = HarmModel<f64>;
pub type QFn = QFunction<f64>;
pub type Greedy = GreedyPolicy<f64>;
pub type PolicyF64 = Policy<f64>;
pub type Behavior = BehaviorModel<f64>;
pub type Simulated = SimulatedData<f64>;
