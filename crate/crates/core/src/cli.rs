//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 for usage, parameter and schema errors, 2 for
//! IO and transport failures.

use std::ffi::OsString;
use std::fmt::Display;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::config::{load_config, write_manifest, ConfigError, Manifest, RunConfig};
use crate::datagen::{export_sft_jsonl, generate_dataset, DatagenError};
use crate::metrics::{csv_field, doc_recall, evaluate_run, MetricsError};
use crate::policy::{bootstrap_prompts, Backend, MockBackend, PolicyError, PolicySpec, PromptSet};
use crate::qa::{load_corpus, load_dataset, DataError, Dataset};
use crate::retrieval::{RemoteRetriever, RetrievalError, Retriever, RetrieverIndex};
use crate::reward::{
    evaluate_stopping_policy, h_star_histogram, score_rollout_reward, train_stopping_policy, RewardError,
    StoppingPolicyParams, SyntheticEnv,
};
use crate::rollout::{read_rollouts, run_rollouts, write_rollouts, RolloutError};

pub const REMOTE_RETRIEVER_URL_ENV: &str = "REMOTE_RETRIEVER_URL";

#[derive(Debug)]
pub enum CliError {
    Validation(String),
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Validation(m) | CliError::Runtime(m) => m,
        }
    }
}

fn validation(e: impl Display) -> CliError {
    CliError::Validation(e.to_string())
}

fn runtime(e: impl Display) -> CliError {
    CliError::Runtime(e.to_string())
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        runtime(e)
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io { .. } => runtime(e),
            _ => validation(e),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } => runtime(e),
            _ => validation(e),
        }
    }
}

impl From<RetrievalError> for CliError {
    fn from(e: RetrievalError) -> Self {
        match e {
            RetrievalError::Transport(_) | RetrievalError::Io(_) => runtime(e),
            _ => validation(e),
        }
    }
}

impl From<PolicyError> for CliError {
    fn from(e: PolicyError) -> Self {
        match e {
            PolicyError::Transport(_) | PolicyError::Io(_) => runtime(e),
            _ => validation(e),
        }
    }
}

impl From<RolloutError> for CliError {
    fn from(e: RolloutError) -> Self {
        match e {
            RolloutError::Io(_) => runtime(e),
            _ => validation(e),
        }
    }
}

impl From<DatagenError> for CliError {
    fn from(e: DatagenError) -> Self {
        match e {
            DatagenError::Io(_) => runtime(e),
            DatagenError::Rollout(inner) => inner.into(),
            _ => validation(e),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        validation(e)
    }
}

impl From<RewardError> for CliError {
    fn from(e: RewardError) -> Self {
        validation(e)
    }
}

#[derive(Debug, Parser)]
#[command(name = "frugalrag", version, about = "Budgeted multi-hop retrieval: rollouts, training data, rewards and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a BM25 index.
    Index {
        #[command(subcommand)]
        action: IndexCommand,
    },
    /// Run rollouts over a dataset.
    Rollout {
        #[command(subcommand)]
        action: RolloutCommand,
    },
    /// Generate best-of-n exploration data and export SFT records.
    Datagen(DatagenArgs),
    /// Score rollouts against a dataset.
    Eval(EvalArgs),
    /// Stopping-reward analysis.
    Reward {
        #[command(subcommand)]
        action: RewardCommand,
    },
    /// Train the toy stopping policy on a synthetic environment.
    TrainStop(TrainStopArgs),
    /// Select few-shot prompt sets from harvested traces.
    Bootstrap(BootstrapArgs),
}

#[derive(Debug, Subcommand)]
enum IndexCommand {
    Build(IndexBuildArgs),
}

#[derive(Debug, Subcommand)]
enum RolloutCommand {
    Run(RolloutRunArgs),
}

#[derive(Debug, Subcommand)]
enum RewardCommand {
    Analyze(RewardAnalyzeArgs),
    Histogram(RewardHistogramArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// Flat `key = value` config file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Worker threads (default: available cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct RetrieverArgs {
    /// Index directory from `index build`.
    #[arg(long)]
    index: Option<PathBuf>,
    /// Remote retriever base URL (falls back to REMOTE_RETRIEVER_URL).
    #[arg(long)]
    retriever_url: Option<String>,
}

#[derive(Debug, Args)]
struct IndexBuildArgs {
    #[arg(long)]
    corpus: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    k1: Option<f64>,
    #[arg(long)]
    b: Option<f64>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct RolloutRunArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    retriever: RetrieverArgs,
    #[arg(long)]
    policy: PathBuf,
    /// Answer generator spec (default: the policy).
    #[arg(long)]
    generator: Option<PathBuf>,
    /// Prompt set overriding the one in the policy spec.
    #[arg(long)]
    prompt: Option<PathBuf>,
    /// Disable FINISH so every rollout spends the full budget.
    #[arg(long)]
    explore: bool,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct DatagenArgs {
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[command(flatten)]
    retriever: RetrieverArgs,
    /// Policy spec (default: seeded mock backend).
    #[arg(long)]
    policy: Option<PathBuf>,
    #[arg(long)]
    limit: Option<usize>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    mixture: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the chosen rollouts as JSONL.
    #[arg(long)]
    rollouts_out: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    rollouts: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct RewardAnalyzeArgs {
    #[arg(long)]
    rollouts: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    /// Reference-policy rollouts; their final recall sets each h*.
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct RewardHistogramArgs {
    #[arg(long)]
    rollouts: PathBuf,
    #[arg(long)]
    gold: PathBuf,
    #[arg(long)]
    reference: Option<PathBuf>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct TrainStopArgs {
    #[arg(long)]
    env: PathBuf,
    #[arg(long)]
    v: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    r_max: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Debug, Args)]
struct BootstrapArgs {
    /// Seed examples (default limit 50).
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    retriever: RetrieverArgs,
    #[arg(long)]
    policy: PathBuf,
    #[arg(long, default_value_t = 50)]
    limit: usize,
    #[arg(long)]
    candidates: Option<usize>,
    #[arg(long)]
    keep: Option<usize>,
    #[arg(long)]
    demos: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Default)]
struct Overrides(Vec<(String, String)>);

impl Overrides {
    fn opt<T: Display>(mut self, key: &str, value: &Option<T>) -> Self {
        if let Some(v) = value {
            self.0.push((key.to_owned(), v.to_string()));
        }
        self
    }

    fn load(self, common: &CommonArgs) -> Result<RunConfig, CliError> {
        let this = self.opt("threads", &common.threads);
        Ok(load_config(common.config.as_deref(), &this.0)?)
    }
}

fn with_pool<T: Send>(cfg: &RunConfig, f: impl FnOnce() -> Result<T, CliError> + Send) -> Result<T, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cfg.threads {
        builder = builder.num_threads(n);
    }
    builder.build().map_err(runtime)?.install(f)
}

fn open_retriever(args: &RetrieverArgs, cfg: &RunConfig) -> Result<Box<dyn Retriever>, CliError> {
    if let Some(dir) = &args.index {
        return Ok(Box::new(RetrieverIndex::load(dir)?));
    }
    let url = args
        .retriever_url
        .clone()
        .or_else(|| std::env::var(REMOTE_RETRIEVER_URL_ENV).ok().filter(|s| !s.is_empty()))
        .ok_or_else(|| validation(format!("no retriever: pass --index or set {REMOTE_RETRIEVER_URL_ENV}")))?;
    Ok(Box::new(RemoteRetriever::new(url, Duration::from_secs(cfg.timeout_secs))))
}

fn load_gold(path: &Path) -> Result<Dataset, CliError> {
    Ok(load_dataset(path, None)?)
}

fn finish(out: &Path, manifest: Manifest) -> Result<(), CliError> {
    write_manifest(out, &manifest.output(out))?;
    Ok(())
}

fn index_build(a: IndexBuildArgs) -> Result<(), CliError> {
    let cfg = Overrides::default().opt("k1", &a.k1).opt("b", &a.b).load(&a.common)?;
    let corpus = load_corpus(&a.corpus)?;
    let index = RetrieverIndex::build(corpus, cfg.bm25())?;
    index.save(&a.out)?;
    println!("indexed {} documents into {}", index.documents().len(), a.out.display());
    finish(&a.out, Manifest::new("index build", &cfg).input("corpus", a.corpus.display()))
}

fn rollout_run(a: RolloutRunArgs) -> Result<(), CliError> {
    let cfg = Overrides::default()
        .opt("budget", &a.budget)
        .opt("k", &a.k)
        .opt("limit", &a.limit)
        .load(&a.common)?;
    let dataset = load_dataset(&a.dataset, cfg.limit)?;
    let mut policy = PolicySpec::load(&a.policy)?;
    if let Some(p) = &a.prompt {
        policy = policy.with_prompt_set(PromptSet::load(p)?);
    }
    if a.explore {
        policy = policy.with_allow_finish(false);
    }
    let generator = match &a.generator {
        Some(p) => PolicySpec::load(p)?,
        None => policy.clone(),
    };
    let retriever = open_retriever(&a.retriever, &cfg)?;
    let rollouts = with_pool(&cfg, || {
        Ok(run_rollouts(&dataset.examples, &policy, Some(&generator), retriever.as_ref(), cfg.rollout())?)
    })?;
    let n = write_rollouts(&a.out, &rollouts)?;
    println!("wrote {n} rollouts to {}", a.out.display());
    let mut m = Manifest::new("rollout run", &cfg)
        .input("dataset", a.dataset.display())
        .input("policy", a.policy.display())
        .input("explore", a.explore);
    if let Some(g) = &a.generator {
        m = m.input("generator", g.display());
    }
    if let Some(i) = &a.retriever.index {
        m = m.input("index", i.display());
    }
    finish(&a.out, m)
}

fn datagen(a: DatagenArgs) -> Result<(), CliError> {
    let cfg = Overrides::default()
        .opt("budget", &a.budget)
        .opt("k", &a.k)
        .opt("mixture", &a.mixture)
        .opt("seed", &a.seed)
        .opt("limit", &a.limit)
        .load(&a.common)?;
    let train = load_dataset(&a.dataset, cfg.limit)?;
    let prompts = PromptSet::load_many(&a.prompts)?;
    let policy = match &a.policy {
        Some(p) => PolicySpec::load(p)?,
        None => PolicySpec::new(Backend::StochasticMock(MockBackend::new(cfg.seed, vec![0.2, 0.4, 0.6]))),
    };
    let retriever = open_retriever(&a.retriever, &cfg)?;
    let out = with_pool(&cfg, || {
        Ok(generate_dataset(&train, &prompts, &policy, retriever.as_ref(), cfg.datagen())?)
    })?;
    let n = export_sft_jsonl(&out.records, &a.out)?;
    if let Some(path) = &a.rollouts_out {
        let chosen: Vec<_> = out.questions.iter().map(|q| q.chosen().clone()).collect();
        write_rollouts(path, &chosen)?;
    }
    println!(
        "wrote {n} SFT records for {} questions ({} sourced without FINISH, {} skipped) to {}",
        out.questions.len(),
        out.source_count(crate::datagen::SftSource::NoFinish),
        out.skipped.len(),
        a.out.display()
    );
    let mut m = Manifest::new("datagen", &cfg)
        .input("dataset", a.dataset.display())
        .input("prompts", a.prompts.display());
    if let Some(p) = &a.policy {
        m = m.input("policy", p.display());
    }
    finish(&a.out, m)
}

fn eval(a: EvalArgs) -> Result<(), CliError> {
    let cfg = Overrides::default().load(&a.common)?;
    let rollouts = read_rollouts(&a.rollouts)?;
    let dataset = load_gold(&a.dataset)?;
    let report = evaluate_run(&rollouts, &dataset)?;
    let mut text = serde_json::to_string_pretty(&report.aggregates).map_err(runtime)?;
    text.push('\n');
    std::fs::write(&a.out, &text)?;
    if let Some(csv) = &a.csv {
        report.write_csv(csv)?;
    }
    print!("{text}");
    finish(
        &a.out,
        Manifest::new("eval", &cfg)
            .input("rollouts", a.rollouts.display())
            .input("dataset", a.dataset.display()),
    )
}

fn reference_recalls(path: &Path, gold: &Dataset) -> Result<std::collections::HashMap<String, f64>, CliError> {
    read_rollouts(path)?
        .into_iter()
        .map(|r| {
            let ex = gold
                .get(&r.example_id)
                .ok_or_else(|| validation(MetricsError::UnknownExample(r.example_id.clone())))?;
            let recall = doc_recall(&r.context_titles(), &ex.gold_titles);
            Ok((r.example_id, recall))
        })
        .collect()
}

fn breakdowns(
    rollouts_path: &Path,
    gold_path: &Path,
    reference: Option<&Path>,
    cfg: &RunConfig,
) -> Result<Vec<(String, crate::reward::RewardBreakdown)>, CliError> {
    let rollouts = read_rollouts(rollouts_path)?;
    let gold = load_gold(gold_path)?;
    let refs = reference.map(|p| reference_recalls(p, &gold)).transpose()?;
    let reward_cfg = cfg.reward();
    rollouts
        .iter()
        .map(|r| {
            let ex = gold
                .get(&r.example_id)
                .ok_or_else(|| validation(MetricsError::UnknownExample(r.example_id.clone())))?;
            let reference_final = match &refs {
                Some(m) => Some(*m.get(&r.example_id).ok_or_else(|| {
                    validation(format!("reference rollouts lack example {:?}", r.example_id))
                })?),
                None => None,
            };
            let b = score_rollout_reward(r, &ex.gold_titles, reference_final, &reward_cfg)
                .map_err(|e| validation(format!("example {:?}: {e}", r.example_id)))?;
            Ok((r.example_id.clone(), b))
        })
        .collect()
}

fn reward_analyze(a: RewardAnalyzeArgs) -> Result<(), CliError> {
    let cfg = Overrides::default()
        .opt("r_max", &a.r_max)
        .opt("alpha", &a.alpha)
        .opt("tau", &a.tau)
        .opt("budget", &a.budget)
        .load(&a.common)?;
    let rows = breakdowns(&a.rollouts, &a.gold, a.reference.as_deref(), &cfg)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    writeln!(w, "example_id,h_term,h_star,case,stop_reward,format_reward,combined")?;
    for (id, b) in &rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            csv_field(id),
            b.h_term,
            b.h_star,
            b.case.as_str(),
            b.stop_reward,
            b.format_reward,
            b.combined
        )?;
    }
    w.flush()?;
    let mean = rows.iter().map(|(_, b)| b.combined).sum::<f64>() / rows.len().max(1) as f64;
    println!("scored {} rollouts, mean combined reward {mean:.4}", rows.len());
    let mut m = Manifest::new("reward analyze", &cfg)
        .input("rollouts", a.rollouts.display())
        .input("gold", a.gold.display());
    if let Some(r) = &a.reference {
        m = m.input("reference", r.display());
    }
    finish(&a.out, m)
}

fn reward_histogram(a: RewardHistogramArgs) -> Result<(), CliError> {
    let cfg = Overrides::default().opt("budget", &a.budget).load(&a.common)?;
    let rows = breakdowns(&a.rollouts, &a.gold, a.reference.as_deref(), &cfg)?;
    let values: Vec<usize> = rows.iter().map(|(_, b)| b.h_star).collect();
    let hist = h_star_histogram(&values, cfg.budget);
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    writeln!(w, "h_star,count")?;
    for (h, c) in &hist {
        writeln!(w, "{h},{c}")?;
    }
    w.flush()?;
    println!("estimated optimal searches over {} rollouts written to {}", values.len(), a.out.display());
    finish(
        &a.out,
        Manifest::new("reward histogram", &cfg)
            .input("rollouts", a.rollouts.display())
            .input("gold", a.gold.display()),
    )
}

fn train_stop(a: TrainStopArgs) -> Result<(), CliError> {
    let cfg = Overrides::default()
        .opt("v", &a.v)
        .opt("steps", &a.steps)
        .opt("seed", &a.seed)
        .opt("learning_rate", &a.learning_rate)
        .opt("r_max", &a.r_max)
        .opt("alpha", &a.alpha)
        .opt("tau", &a.tau)
        .load(&a.common)?;
    let env = SyntheticEnv::load(&a.env)?;
    let reward_cfg = crate::reward::RewardConfig {
        budget: env.budget,
        ..cfg.reward()
    };
    let params = StoppingPolicyParams {
        learning_rate: cfg.learning_rate,
        seed: cfg.seed,
        ..StoppingPolicyParams::default()
    };
    let before = evaluate_stopping_policy(&env, &params.weights, &reward_cfg, 2000, cfg.seed)?;
    let outcome = train_stopping_policy(&env, params, &reward_cfg, cfg.v, cfg.steps)?;
    let after = evaluate_stopping_policy(&env, &outcome.params.weights, &reward_cfg, 2000, cfg.seed)?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(&a.out)?);
    writeln!(w, "step,mean_abs_error,mean_searches,mean_reward")?;
    for p in &outcome.curve {
        writeln!(w, "{},{},{},{}", p.step, p.mean_abs_error, p.mean_searches, p.mean_reward)?;
    }
    w.flush()?;
    let summary = serde_json::json!({
        "weights": outcome.params.weights,
        "untrained": before,
        "trained": after,
    });
    println!("{summary}");
    finish(&a.out, Manifest::new("train-stop", &cfg).input("env", a.env.display()))
}

fn bootstrap(a: BootstrapArgs) -> Result<(), CliError> {
    let cfg = Overrides::default()
        .opt("candidates", &a.candidates)
        .opt("keep", &a.keep)
        .opt("demos", &a.demos)
        .opt("seed", &a.seed)
        .opt("budget", &a.budget)
        .opt("k", &a.k)
        .load(&a.common)?;
    let seeds = load_dataset(&a.dataset, Some(a.limit))?;
    let policy = PolicySpec::load(&a.policy)?;
    let retriever = open_retriever(&a.retriever, &cfg)?;
    let outcome = with_pool(&cfg, || {
        Ok(bootstrap_prompts(&policy, &seeds, retriever.as_ref(), cfg.rollout(), cfg.bootstrap())?)
    })?;
    let mut text = serde_json::to_string_pretty(&outcome.selected).map_err(runtime)?;
    text.push('\n');
    std::fs::write(&a.out, text)?;
    println!(
        "selected {} of {} prompt sets from {} harvested traces",
        outcome.selected.len(),
        outcome.scores.len(),
        outcome.harvested
    );
    finish(
        &a.out,
        Manifest::new("bootstrap", &cfg)
            .input("dataset", a.dataset.display())
            .input("policy", a.policy.display())
            .input("limit", a.limit),
    )
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Index { action: IndexCommand::Build(a) } => index_build(a),
        Command::Rollout { action: RolloutCommand::Run(a) } => rollout_run(a),
        Command::Datagen(a) => datagen(a),
        Command::Eval(a) => eval(a),
        Command::Reward { action: RewardCommand::Analyze(a) } => reward_analyze(a),
        Command::Reward { action: RewardCommand::Histogram(a) } => reward_histogram(a),
        Command::TrainStop(a) => train_stop(a),
        Command::Bootstrap(a) => bootstrap(a),
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_default_env()
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_logging();
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}
