//! Config-driven replication runner: simulate, fit harm, train, evaluate, aggregate, write.

use std::collections::BTreeMap;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::envs::{derive_seed, evaluate_policy, generate_dataset, EnvSpec, EvalMetrics};
use crate::error::{Error, Result};
use crate::fqi::{fqi_train, FqiConfig, GreedyPolicy};
use crate::data::pool_transitions;
use crate::harm::{fit_harm_model, transform_utilities, PenaltyConfig, PenaltyKind, Reference};
use crate::policy::Policy;
use crate::regression::RegressorConfig;

const DATA_PURPOSE: u64 = 1;
const EVAL_PURPOSE: u64 = 2;
const FQI_PURPOSE: u64 = 3;
const HARM_PURPOSE: u64 = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    HarmAware,
    Unaware,
    Behavior,
    Random,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::HarmAware, Method::Unaware, Method::Behavior, Method::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::HarmAware => "harm-aware",
            Method::Unaware => "unaware",
            Method::Behavior => "behavior",
            Method::Random => "random",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub methods: Vec<Method>,
    pub betas: Vec<f64>,
    pub rho: f64,
    pub penalty_kind: PenaltyKind,
    /// Training sample sizes `N`.
    pub sample_sizes: Vec<usize>,
    pub gamma: f64,
    pub replications: usize,
    pub seed: u64,
    /// Trajectories per policy evaluation; `None` uses the training `N`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_individuals: Option<usize>,
    pub reference_action: usize,
    /// Rayon worker count; `None` uses the global pool.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    pub env: EnvSpec,
    pub harm_regressor: RegressorConfig,
    pub fqi: FqiConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            methods: Method::ALL.to_vec(),
            betas: vec![0.5],
            rho: 1.0,
            penalty_kind: PenaltyKind::HarmRate,
            sample_sizes: vec![100, 500, 1000],
            gamma: 0.9,
            replications: 20,
            seed: 2024,
            eval_individuals: None,
            reference_action: 0,
            threads: None,
            env: EnvSpec::linear(),
            harm_regressor: RegressorConfig::default(),
            fqi: FqiConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let config: Self = toml::from_str(s).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// SHA-256 of the canonical TOML rendering.
    pub fn hash(&self) -> Result<String> {
        let digest = Sha256::digest(self.to_toml_string()?.as_bytes());
        Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::Config("method set is empty".into()));
        }
        if self.betas.is_empty() || self.sample_sizes.is_empty() {
            return Err(Error::Config("beta and sample-size grids must be nonempty".into()));
        }
        for &beta in &self.betas {
            PenaltyConfig { beta, kind: self.penalty_kind }.validate()?;
        }
        if !(self.rho.abs() <= 1.0) {
            return Err(Error::Config(format!("rho must lie in [-1, 1], got {}", self.rho)));
        }
        if self.sample_sizes.contains(&0) || self.eval_individuals == Some(0) {
            return Err(Error::Config("sample sizes must be positive".into()));
        }
        if self.replications < 1 {
            return Err(Error::Config("replications must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.reference_action > 1 {
            return Err(Error::Config("reference action must be 0 or 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be >= 1".into()));
        }
        self.env.validate()?;
        self.fqi.validate()
    }

    fn fqi_for(&self, replication: usize, n: usize) -> FqiConfig {
        FqiConfig {
            gamma: self.gamma,
            seed: derive_seed(derive_seed(self.seed, FQI_PURPOSE), (n as u64) << 32 | replication as u64),
            ..self.fqi.clone()
        }
    }
}

/// One `(method, beta, N, replication)` result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRow {
    pub method: Method,
    pub beta: f64,
    pub rho: f64,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub replication: usize,
    pub seed: u64,
    pub disc_outcome: f64,
    pub avg_harm: f64,
    pub avg_harm_indicator_variant: f64,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub n: usize,
    pub replication: usize,
    pub error: String,
}

/// Mean, sample standard deviation and standard error of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
    pub se: f64,
}

impl Moments {
    /// Sample moments; a single value has std 0.
    pub fn of(values: &[f64]) -> Option<Moments> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        Some(Moments { mean, std, se: std / n.sqrt() })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub method: Method,
    pub beta: f64,
    pub n: usize,
    pub replications: usize,
    pub disc_outcome: Moments,
    pub avg_harm: Moments,
    pub avg_harm_indicator_variant: Moments,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub rows: Vec<ReplicationRow>,
    pub failures: Vec<ReplicationFailure>,
    pub aggregates: Vec<AggregateRow>,
}

impl ExperimentResult {
    pub fn aggregate(&self, method: Method, beta: f64, n: usize) -> Option<&AggregateRow> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && a.beta == beta && a.n == n)
    }
}

fn row(config: &ExperimentConfig, method: Method, beta: f64, n: usize, r: usize, m: &EvalMetrics, secs: f64) -> ReplicationRow {
    ReplicationRow {
        method,
        beta,
        rho: config.rho,
        n,
        horizon: config.env.horizon,
        replication: r,
        seed: config.seed,
        disc_outcome: m.discounted_outcome,
        avg_harm: m.average_harm,
        avg_harm_indicator_variant: m.average_harm_indicator,
        wall_time_secs: secs,
    }
}

/// Runs every requested method for replication `r` at training size `n`. All policies are
/// scored on the same evaluation streams.
pub fn run_replication(config: &ExperimentConfig, n: usize, r: usize) -> Result<Vec<ReplicationRow>> {
    let env = &config.env;
    let horizon = env.horizon;
    let n_eval = config.eval_individuals.unwrap_or(n);
    let data_seed = derive_seed(config.seed, DATA_PURPOSE);
    let eval_seed = derive_seed(config.seed, EVAL_PURPOSE);
    let eval = |policy: &Policy<f64>| {
        evaluate_policy(env, policy, n_eval, horizon, config.gamma, eval_seed, (r * n_eval) as u64)
    };
    let sim = generate_dataset::<f64>(env, n, &Policy::simulation_behavior(), data_seed, (r * n) as u64)?;
    let data = &sim.dataset;
    let fqi = config.fqi_for(r, n);
    let greedy = |utilities: &[f64]| -> Result<Policy<f64>> {
        let batch = pool_transitions(data, utilities)?;
        let q = fqi_train(&batch, &fqi)?;
        Ok(Policy::Greedy(GreedyPolicy {
            q,
            reference: config.reference_action,
        }))
    };

    let mut rows = Vec::new();
    for &method in &config.methods {
        let start = Instant::now();
        match method {
            Method::HarmAware => {
                let regressor = match &config.harm_regressor {
                    RegressorConfig::Mlp(m) => RegressorConfig::Mlp(crate::regression::MlpConfig {
                        seed: derive_seed(derive_seed(config.seed, HARM_PURPOSE), (n as u64) << 32 | r as u64),
                        ..m.clone()
                    }),
                    other => other.clone(),
                };
                let model = fit_harm_model(data, config.rho, Reference::action(config.reference_action), &regressor)?;
                for &beta in &config.betas {
                    let start = Instant::now();
                    let penalty = PenaltyConfig { beta, kind: config.penalty_kind };
                    let utilities = transform_utilities(data, &model, &penalty)?;
                    let metrics = eval(&greedy(&utilities)?)?;
                    rows.push(row(config, method, beta, n, r, &metrics, start.elapsed().as_secs_f64()));
                }
                continue;
            }
            Method::Unaware => {
                let metrics = eval(&greedy(data.outcomes())?)?;
                push_per_beta(&mut rows, config, method, n, r, &metrics, start);
            }
            Method::Behavior => {
                let metrics = eval(&Policy::simulation_behavior())?;
                push_per_beta(&mut rows, config, method, n, r, &metrics, start);
            }
            Method::Random => {
                let metrics = eval(&Policy::Uniform { n_actions: 2 })?;
                push_per_beta(&mut rows, config, method, n, r, &metrics, start);
            }
        }
    }
    Ok(rows)
}

/// Baselines do not depend on beta; their row is repeated for every grid value.
fn push_per_beta(
    rows: &mut Vec<ReplicationRow>,
    config: &ExperimentConfig,
    method: Method,
    n: usize,
    r: usize,
    metrics: &EvalMetrics,
    start: Instant,
) {
    let secs = start.elapsed().as_secs_f64();
    for &beta in &config.betas {
        rows.push(row(config, method, beta, n, r, metrics, secs));
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let units: Vec<(usize, usize)> = config
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..config.replications).map(move |r| (n, r)))
        .collect();
    let work = || -> Vec<(usize, usize, Result<Vec<ReplicationRow>>)> {
        units
            .par_iter()
            .map(|&(n, r)| (n, r, run_replication(config, n, r)))
            .collect()
    };
    let outcomes = match config.threads {
        Some(k) => rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build()
            .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for (n, r, outcome) in outcomes {
        match outcome {
            Ok(mut rs) => rows.append(&mut rs),
            Err(e) => {
                log::warn!("replication {r} at N={n} failed: {e}");
                failures.push(ReplicationFailure {
                    n,
                    replication: r,
                    error: e.to_string(),
                });
            }
        }
    }
    if 2 * failures.len() >= units.len() && !failures.is_empty() {
        return Err(Error::TooManyFailures {
            failed: failures.len(),
            total: units.len(),
            first: failures[0].error.clone(),
        });
    }
    let aggregates = summarize_replications(&rows);
    Ok(ExperimentResult {
        rows,
        failures,
        aggregates,
    })
}

/// Groups rows by `(method, beta, N)` and reports mean, sample std and standard error per
/// metric, ordered by method, then beta, then `N`.
pub fn summarize_replications(rows: &[ReplicationRow]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<(Method, u64, usize), Vec<&ReplicationRow>> = BTreeMap::new();
    for r in rows {
        // Order-preserving key for non-negative floats.
        groups.entry((r.method, r.beta.to_bits(), r.n)).or_default().push(r);
    }
    groups
        .into_iter()
        .map(|((method, beta, n), rs)| {
            let moments = |f: fn(&ReplicationRow) -> f64| {
                Moments::of(&rs.iter().map(|r| f(r)).collect::<Vec<_>>()).expect("groups are nonempty")
            };
            AggregateRow {
                method,
                beta: f64::from_bits(beta),
                n,
                replications: rs.len(),
                disc_outcome: moments(|r| r.disc_outcome),
                avg_harm: moments(|r| r.avg_harm),
                avg_harm_indicator_variant: moments(|r| r.avg_harm_indicator_variant),
            }
        })
        .collect()
}

pub const REPLICATION_COLUMNS: [&str; 10] = [
    "method",
    "beta",
    "rho",
    "N",
    "T",
    "replication",
    "seed",
    "disc_outcome",
    "avg_harm",
    "avg_harm_indicator_variant",
];

pub fn write_replication_csv(rows: &[ReplicationRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(REPLICATION_COLUMNS)?;
    let mut sorted: Vec<&ReplicationRow> = rows.iter().collect();
    sorted.sort_by(|a, b| {
        (a.n, a.replication, a.method, a.beta.to_bits()).cmp(&(b.n, b.replication, b.method, b.beta.to_bits()))
    });
    for r in sorted {
        w.write_record([
            r.method.to_string(),
            r.beta.to_string(),
            r.rho.to_string(),
            r.n.to_string(),
            r.horizon.to_string(),
            r.replication.to_string(),
            r.seed.to_string(),
            r.disc_outcome.to_string(),
            r.avg_harm.to_string(),
            r.avg_harm_indicator_variant.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv(aggregates: &[AggregateRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["method".to_string(), "beta".into(), "N".into(), "replications".into()];
    for metric in ["disc_outcome", "avg_harm", "avg_harm_indicator_variant"] {
        for stat in ["mean", "std", "se"] {
            header.push(format!("{metric}_{stat}"));
        }
    }
    w.write_record(&header)?;
    for a in aggregates {
        let mut rec = vec![a.method.to_string(), a.beta.to_string(), a.n.to_string(), a.replications.to_string()];
        for m in [a.disc_outcome, a.avg_harm, a.avg_harm_indicator_variant] {
            rec.extend([m.mean.to_string(), m.std.to_string(), m.se.to_string()]);
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config_sha256: String,
    pub config: ExperimentConfig,
    pub seed: u64,
    pub data_seed: u64,
    pub eval_seed: u64,
    pub replications: usize,
    pub rows: usize,
    pub failures: Vec<ReplicationFailure>,
    pub package: String,
    pub version: String,
}

/// Writes `replications.csv`, `aggregate.csv` and `manifest.json` into `dir`.
pub fn write_outputs(result: &ExperimentResult, config: &ExperimentConfig, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    write_replication_csv(&result.rows, dir.join("replications.csv"))?;
    write_aggregate_csv(&result.aggregates, dir.join("aggregate.csv"))?;
    let manifest = Manifest {
        config_sha256: config.hash()?,
        config: config.clone(),
        seed: config.seed,
        data_seed: derive_seed(config.seed, DATA_PURPOSE),
        eval_seed: derive_seed(config.seed, EVAL_PURPOSE),
        replications: config.replications,
        rows: result.rows.len(),
        failures: result.failures.clone(),
        package: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
