use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use harmrl::envs::{derive_seed, metrics_from_rollouts, rollout, trajectory_rng};
use harmrl::experiment::write_outputs;
use harmrl::ope::wis_harm_of_kind;
use harmrl::{
    estimate_behavior_policy, fit_harm_model, fqi_train, generate_dataset, load_longitudinal_csv, pool_transitions,
    run_experiment, save_longitudinal_csv, transform_utilities, wis_outcome, ActionMapping, BehaviorKind, CsvSchema,
    Dataset, EnvKind, EnvSpec, Error, ExperimentConfig, FqiMode, Greedy, Harm, MlpConfig, PenaltyConfig, PenaltyKind,
    PolicyF64, Reference, RegressorConfig,
};

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Lib(#[from] Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Lib(Error::Config(_)) => 2,
            CliError::Lib(_) => 3,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Harm-aware offline policy learning: simulate, fit harm models, train, evaluate, replicate.
#[derive(Debug, Parser)]
#[command(name = "harmrl", version)]
struct Cli {
    /// Experiment config (TOML); supplies defaults for every subcommand.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for parallel sections.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate behavior data: dataset.csv plus counterfactuals.csv (y0, y1).
    Simulate(SimulateArgs),
    /// Fit the per-action mean/variance harm model on a dataset; writes harm_model.json.
    FitHarm(FitHarmArgs),
    /// Train a greedy FQI policy on raw or harm-penalized utilities; writes policy.json.
    Train(TrainArgs),
    /// Score a policy on fresh simulated rollouts; writes evaluation.json.
    Evaluate(EvaluateArgs),
    /// Weighted importance sampling estimates of outcome and harm on logged data.
    Ope(OpeArgs),
    /// Run the full replication study from the config.
    Replicate(ReplicateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum EnvArg {
    Linear,
    Nonlinear,
}

impl From<EnvArg> for EnvKind {
    fn from(e: EnvArg) -> Self {
        match e {
            EnvArg::Linear => EnvKind::Linear,
            EnvArg::Nonlinear => EnvKind::Nonlinear,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    Batched,
    Full,
}

impl From<ModeArg> for FqiMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Batched => FqiMode::Batched,
            ModeArg::Full => FqiMode::Full,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum RegressorArg {
    Linear,
    Mlp,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum PenaltyArg {
    HarmRate,
    HarmValue,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BehaviorArg {
    EmpiricalFrequency,
    Multinomial,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BaselineArg {
    Behavior,
    Random,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Longitudinal CSV, one row per individual and time step.
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "id")]
    id_column: String,
    #[arg(long, default_value = "t")]
    time_column: String,
    /// Comma-separated state columns; default every `x_<k>` column.
    #[arg(long, value_delimiter = ',')]
    state_columns: Vec<String>,
    /// Comma-separated raw action columns.
    #[arg(long, value_delimiter = ',', default_value = "action")]
    action_columns: Vec<String>,
    #[arg(long, default_value = "y")]
    outcome_column: String,
    /// JSON action mapping; default uses the action column as integer codes.
    #[arg(long)]
    mapping: Option<PathBuf>,
}

impl DataArgs {
    fn load(&self) -> CliResult<Dataset> {
        let schema = CsvSchema {
            id: self.id_column.clone(),
            time: self.time_column.clone(),
            states: self.state_columns.clone(),
            actions: self.action_columns.clone(),
            outcome: self.outcome_column.clone(),
        };
        let mapping: ActionMapping = match &self.mapping {
            Some(p) => read_json(p)?,
            None => ActionMapping::Identity,
        };
        Ok(load_longitudinal_csv(&self.data, &schema, &mapping)?)
    }
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    env: Option<EnvArg>,
    /// Number of individuals (default: largest configured sample size).
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
}

#[derive(Debug, Args)]
struct FitHarmArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    reference_action: Option<usize>,
    #[arg(long, value_enum)]
    regressor: Option<RegressorArg>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Harm model JSON; without it the policy is trained on raw outcomes.
    #[arg(long)]
    harm_model: Option<PathBuf>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long, value_enum)]
    penalty_kind: Option<PenaltyArg>,
    #[arg(long, value_enum)]
    fqi_mode: Option<ModeArg>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    /// Policy JSON written by `train`.
    #[arg(long, conflicts_with = "baseline", required_unless_present = "baseline")]
    policy: Option<PathBuf>,
    #[arg(long, value_enum)]
    baseline: Option<BaselineArg>,
    #[arg(long, value_enum)]
    env: Option<EnvArg>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    horizon: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
}

#[derive(Debug, Args)]
struct OpeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long)]
    harm_model: PathBuf,
    #[arg(long, value_enum, default_value = "empirical-frequency")]
    behavior: BehaviorArg,
    #[arg(long, value_enum, default_value = "harm-rate")]
    harm_kind: PenaltyArg,
}

#[derive(Debug, Args)]
struct ReplicateArgs {
    #[arg(long, value_enum)]
    fqi_mode: Option<ModeArg>,
    #[arg(long)]
    replications: Option<usize>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    fs::write(path, serde_json::to_string_pretty(value).map_err(Error::from)?).map_err(Error::from)?;
    Ok(())
}

fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut config = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    if cli.threads.is_some() {
        config.threads = cli.threads;
    }
    Ok(config)
}

fn env_for(config: &ExperimentConfig, env: Option<EnvArg>, horizon: Option<usize>) -> EnvSpec {
    let mut spec = match env {
        Some(kind) if EnvKind::from(kind) != config.env.kind => EnvSpec::of_kind(kind.into()),
        _ => config.env.clone(),
    };
    if let Some(h) = horizon {
        spec.horizon = h;
    }
    spec
}

fn simulate(cli: &Cli, config: &ExperimentConfig, args: &SimulateArgs) -> CliResult<()> {
    let spec = env_for(config, args.env, args.horizon);
    let n = args.n.unwrap_or_else(|| config.sample_sizes.iter().copied().max().unwrap_or(1000));
    let seed = derive_seed(config.seed, 1);
    let sim = generate_dataset::<f64>(&spec, n, &PolicyF64::simulation_behavior(), seed, 0)?;
    save_longitudinal_csv(&sim.dataset, cli.out.join("dataset.csv"))?;
    let mut w = csv::Writer::from_path(cli.out.join("counterfactuals.csv")).map_err(Error::from)?;
    w.write_record(["id", "t", "y0", "y1"]).map_err(Error::from)?;
    let steps = sim.dataset.steps();
    for (cell, (y0, y1)) in sim.counterfactuals.iter().enumerate() {
        let (i, t) = (cell / steps, cell % steps);
        w.write_record([i.to_string(), t.to_string(), y0.to_string(), y1.to_string()])
            .map_err(Error::from)?;
    }
    w.flush().map_err(Error::from)?;
    log::info!("wrote {n} trajectories to {}", cli.out.display());
    Ok(())
}

fn fit_harm(cli: &Cli, config: &ExperimentConfig, args: &FitHarmArgs) -> CliResult<()> {
    let data = args.data.load()?;
    let rho = args.rho.unwrap_or(config.rho);
    let reference = Reference::action(args.reference_action.unwrap_or(config.reference_action));
    let regressor = match args.regressor {
        None => config.harm_regressor.clone(),
        Some(RegressorArg::Linear) => RegressorConfig::default(),
        Some(RegressorArg::Mlp) => RegressorConfig::Mlp(MlpConfig {
            seed: config.seed,
            ..MlpConfig::default()
        }),
    };
    let model = fit_harm_model(&data, rho, reference, &regressor)?;
    write_json(&cli.out.join("harm_model.json"), &model)
}

fn train(cli: &Cli, config: &ExperimentConfig, args: &TrainArgs) -> CliResult<()> {
    let data = args.data.load()?;
    let utilities = match &args.harm_model {
        Some(p) => {
            let model: Harm = read_json(p)?;
            model.validate()?;
            let penalty = PenaltyConfig {
                beta: args.beta.unwrap_or(config.betas[0]),
                kind: match args.penalty_kind {
                    Some(PenaltyArg::HarmValue) => PenaltyKind::HarmValue,
                    Some(PenaltyArg::HarmRate) => PenaltyKind::HarmRate,
                    None => config.penalty_kind,
                },
            };
            transform_utilities(&data, &model, &penalty)?
        }
        None => data.outcomes().to_vec(),
    };
    let mut fqi = config.fqi.clone();
    fqi.gamma = args.gamma.unwrap_or(config.gamma);
    fqi.seed = derive_seed(config.seed, 3);
    if let Some(m) = args.fqi_mode {
        fqi.mode = m.into();
    }
    if let Some(k) = args.iterations {
        fqi.iterations = k;
    }
    let batch = pool_transitions(&data, &utilities)?;
    let q = fqi_train(&batch, &fqi)?;
    let policy = PolicyF64::Greedy(Greedy {
        q,
        reference: config.reference_action,
    });
    write_json(&cli.out.join("policy.json"), &policy)
}

#[derive(Serialize)]
struct EvaluationReport {
    discounted_outcome: f64,
    average_harm: f64,
    average_harm_indicator_variant: f64,
    n: usize,
    horizon: usize,
    gamma: f64,
}

fn evaluate(cli: &Cli, config: &ExperimentConfig, args: &EvaluateArgs) -> CliResult<()> {
    let policy: PolicyF64 = match (&args.policy, args.baseline) {
        (Some(p), _) => read_json(p)?,
        (None, Some(BaselineArg::Behavior)) => PolicyF64::simulation_behavior(),
        (None, Some(BaselineArg::Random)) => PolicyF64::Uniform { n_actions: 2 },
        (None, None) => return Err(CliError::Config("pass --policy or --baseline".into())),
    };
    policy.validate()?;
    let spec = env_for(config, args.env, args.horizon);
    let n = args.n.unwrap_or_else(|| config.sample_sizes.iter().copied().max().unwrap_or(1000));
    let gamma = args.gamma.unwrap_or(config.gamma);
    let seed = derive_seed(config.seed, 2);
    let trajectories: Vec<_> = (0..n)
        .map(|i| rollout(&spec, &policy, spec.horizon, &mut trajectory_rng(seed, i as u64)))
        .collect();
    let m = metrics_from_rollouts(&trajectories, gamma)?;
    let report = EvaluationReport {
        discounted_outcome: m.discounted_outcome,
        average_harm: m.average_harm,
        average_harm_indicator_variant: m.average_harm_indicator,
        n,
        horizon: spec.horizon,
        gamma,
    };
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    write_json(&cli.out.join("evaluation.json"), &report)
}

#[derive(Serialize)]
struct OpeReport {
    wis_outcome: f64,
    wis_harm: f64,
    matched_fraction: f64,
}

fn ope(cli: &Cli, args: &OpeArgs) -> CliResult<()> {
    let data = args.data.load()?;
    let policy: PolicyF64 = read_json(&args.policy)?;
    let harm: Harm = read_json(&args.harm_model)?;
    harm.validate()?;
    let kind = match args.behavior {
        BehaviorArg::EmpiricalFrequency => BehaviorKind::EmpiricalFrequency,
        BehaviorArg::Multinomial => BehaviorKind::Multinomial,
    };
    let harm_kind = match args.harm_kind {
        PenaltyArg::HarmRate => PenaltyKind::HarmRate,
        PenaltyArg::HarmValue => PenaltyKind::HarmValue,
    };
    let behavior = estimate_behavior_policy(&data, kind)?;
    let outcome = wis_outcome(&data, &policy, &behavior)?;
    let harm_est = wis_harm_of_kind(&data, &policy, &behavior, &harm, harm_kind)?;
    let report = OpeReport {
        wis_outcome: outcome.value,
        wis_harm: harm_est.value,
        matched_fraction: outcome.matched_fraction(),
    };
    println!("{}", serde_json::to_string(&report).map_err(Error::from)?);
    write_json(&cli.out.join("ope.json"), &report)
}

fn replicate(cli: &Cli, mut config: ExperimentConfig, args: &ReplicateArgs) -> CliResult<()> {
    if let Some(m) = args.fqi_mode {
        config.fqi.mode = m.into();
    }
    if let Some(r) = args.replications {
        config.replications = r;
    }
    config.validate()?;
    let result = run_experiment(&config)?;
    write_outputs(&result, &config, &cli.out)?;
    for a in &result.aggregates {
        println!(
            "{:<10} beta={:<4} N={:<5} outcome {:.3} ± {:.3}  harm {:.3} ± {:.3}  harm(ind) {:.3} ± {:.3}",
            a.method,
            a.beta,
            a.n,
            a.disc_outcome.mean,
            a.disc_outcome.std,
            a.avg_harm.mean,
            a.avg_harm.std,
            a.avg_harm_indicator_variant.mean,
            a.avg_harm_indicator_variant.std
        );
    }
    if !result.failures.is_empty() {
        log::warn!("{} replications failed; see manifest.json", result.failures.len());
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let config = load_config(cli)?;
    if let Some(k) = cli.threads {
        if k == 0 {
            return Err(CliError::Config("--threads must be >= 1".into()));
        }
        // Only the first call can configure the global pool; later calls are harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(k).build_global();
    }
    fs::create_dir_all(&cli.out).map_err(Error::from)?;
    match &cli.command {
        Command::Simulate(a) => simulate(cli, &config, a),
        Command::FitHarm(a) => fit_harm(cli, &config, a),
        Command::Train(a) => train(cli, &config, a),
        Command::Evaluate(a) => evaluate(cli, &config, a),
        Command::Ope(a) => ope(cli, a),
        Command::Replicate(a) => replicate(cli, config, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
