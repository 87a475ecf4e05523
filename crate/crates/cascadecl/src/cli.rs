//! Command-line surface wiring every module together: dataset building,
//! synthetic generation, training, incremental training, checkpoint
//! evaluation and report merging.
//!
//! Conventions: logs go to standard error, machine-readable data to files
//! (or, for `eval`, standard output); outputs are replaced atomically so
//! reruns are idempotent; configuration precedence is CLI flags over a
//! flat key=value config file over built-in defaults; the base seed falls
//! back to `$CASCADECL_SEED` when no flag or file value names one.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error,
//! 4 checkpoint/dataset incompatibility.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::archive::{load_dataset, save_dataset, write_atomic, ArchiveError};
use crate::builder::{build_dataset, BuildError, BuildOptions};
use crate::cascade::ClipSpec;
use crate::checkpoint::{Checkpoint, CheckpointError};
use crate::continual::{ContinualError, Method};
use crate::derive_seed;
use crate::features::FeatureMode;
use crate::gnn::{ModelConfig, ModelError};
use crate::harness::{
    evaluate_checkpoint, history_csv, run_incremental, run_single, EvalSplit, ExperimentReport,
    ExperimentSpec, HarnessError, REPORT_CSV, REPORT_JSON,
};
use crate::optim::TrainOptions;
use crate::records::{
    read_labels, read_timelines, read_tweets, read_users, write_jsonl, IngestError, LabelRecord,
};
use crate::synth::{default_regimes, emit_records, generate, SynthError, GEN_MANIFEST_FILE};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_DATA: i32 = 3;
pub const EXIT_INCOMPATIBLE: i32 = 4;

/// Seed used when neither flag, config file nor environment names one.
pub const DEFAULT_SEED: u64 = 42;

pub const SEED_ENV: &str = "CASCADECL_SEED";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

// ---------------------------------------------------------------------------
// Errors and exit codes
// ---------------------------------------------------------------------------

/// A diagnosis plus the process exit code it maps to.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_CONFIG,
            message: message.into(),
        }
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_DATA,
            message: message.into(),
        }
    }

    pub fn incompatible(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INCOMPATIBLE,
            message: message.into(),
        }
    }
}

impl From<IngestError> for CliError {
    fn from(e: IngestError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ArchiveError> for CliError {
    fn from(e: ArchiveError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::data(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::config(e.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(e: BuildError) -> Self {
        match e {
            // Bad knobs are configuration; bad records are data.
            BuildError::InvalidWindow(_) | BuildError::InvalidClip | BuildError::MissingTimelines(_) => {
                CliError::config(e.to_string())
            }
            BuildError::NoNewsItems | BuildError::Item { .. } => CliError::data(e.to_string()),
        }
    }
}

impl From<SynthError> for CliError {
    fn from(e: SynthError) -> Self {
        match e {
            SynthError::DegenerateRegime(_) => CliError::config(e.to_string()),
            SynthError::Build(inner) => inner.into(),
        }
    }
}

impl From<ContinualError> for CliError {
    fn from(e: ContinualError) -> Self {
        match e {
            ContinualError::ArchitectureMismatch { .. } => CliError::incompatible(e.to_string()),
            ContinualError::SizeExceedsDataset { .. } | ContinualError::EmptySamples => {
                CliError::config(e.to_string())
            }
            other => CliError::data(other.to_string()),
        }
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        match e {
            HarnessError::IncompatibleCheckpoint { .. } => CliError::incompatible(e.to_string()),
            HarnessError::InvalidFraction(_) | HarnessError::InvalidSpec(_) => {
                CliError::config(e.to_string())
            }
            HarnessError::Model(inner) => inner.into(),
            HarnessError::Continual(inner) => inner.into(),
            HarnessError::Build(inner) => inner.into(),
            other => CliError::data(other.to_string()),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::data(format!("{}: {e}", path.display()))
}

// ---------------------------------------------------------------------------
// Config file
// ---------------------------------------------------------------------------

/// Every key the flat config file may carry; anything else is rejected.
const KNOWN_KEYS: &[&str] = &[
    "seed",
    "jobs",
    "feature-mode",
    "window-h",
    "use-follow",
    "clip-tweets",
    "clip-hours",
    "strict",
    "n-news",
    "pool-layers",
    "hidden-dim",
    "embed-dim",
    "pool-ratio",
    "max-nodes",
    "epochs",
    "batch-size",
    "lr",
    "patience",
    "repeats",
    "train-frac",
    "method",
    "mem-size",
    "lambda",
    "fisher-samples",
    "empirical-fisher",
    "phase2-epochs",
    "task",
    "split",
];

/// Flat `key = value` configuration: one pair per line, `#` comments,
/// kebab-case keys matching the long CLI flags. Unknown keys are errors
/// so typos cannot silently fall back to defaults.
#[derive(Debug, Default)]
pub struct FileConfig {
    values: BTreeMap<String, String>,
}

impl FileConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::config(format!("config line {}: expected `key = value`", idx + 1))
            })?;
            let key = key.trim();
            if !KNOWN_KEYS.contains(&key) {
                return Err(CliError::config(format!(
                    "config line {}: unknown key `{key}`",
                    idx + 1
                )));
            }
            values.insert(key.to_string(), value.trim().to_string());
        }
        Ok(FileConfig { values })
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    fn get<T>(&self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse()
                .map(Some)
                .map_err(|e| CliError::config(format!("config key `{key}`: {e}"))),
        }
    }
}

/// Flag > config file > default.
fn resolve<T>(flag: Option<T>, cfg: &FileConfig, key: &str, default: T) -> Result<T, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(v),
        None => Ok(cfg.get(key)?.unwrap_or(default)),
    }
}

/// Flag > config file, with no default: absent everywhere stays `None`.
fn resolve_opt<T>(flag: Option<T>, cfg: &FileConfig, key: &str) -> Result<Option<T>, CliError>
where
    T: FromStr,
    T::Err: Display,
{
    match flag {
        Some(v) => Ok(Some(v)),
        None => cfg.get(key),
    }
}

/// Boolean flags cannot express "explicitly off", so a present flag wins
/// and an absent one defers to the file.
fn resolve_flag(flag: bool, cfg: &FileConfig, key: &str) -> Result<bool, CliError> {
    if flag {
        Ok(true)
    } else {
        Ok(cfg.get::<bool>(key)?.unwrap_or(false))
    }
}

/// Resolved seed plus whether it was stated explicitly (flag, file or
/// environment) rather than defaulted.
fn resolve_seed(flag: Option<u64>, cfg: &FileConfig) -> Result<(u64, bool), CliError> {
    if let Some(s) = flag {
        return Ok((s, true));
    }
    if let Some(s) = cfg.get::<u64>("seed")? {
        return Ok((s, true));
    }
    if let Ok(raw) = std::env::var(SEED_ENV) {
        let s = raw
            .parse()
            .map_err(|e| CliError::config(format!("{SEED_ENV}=`{raw}`: {e}")))?;
        return Ok((s, true));
    }
    Ok((DEFAULT_SEED, false))
}

// ---------------------------------------------------------------------------
// Argument definitions
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(
    name = "cascadecl",
    version,
    about = "Fake-news classification from propagation graphs, with continual incremental training",
    propagate_version = true
)]
pub struct Cli {
    /// Flat key=value config file; CLI flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Base RNG seed [fallbacks: config file, $CASCADECL_SEED, 42].
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Cap worker threads (default: all cores).
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a propagation-graph dataset archive from raw records.
    Build(BuildArgs),
    /// Generate the two built-in synthetic regimes (raw records + archives).
    GenSynth(GenSynthArgs),
    /// Train on one dataset archive over seeded repeats.
    Train(TrainArgs),
    /// Train on one archive, then incrementally on a second.
    TrainIncremental(TrainIncrementalArgs),
    /// Evaluate a saved checkpoint on a dataset archive.
    Eval(EvalArgs),
    /// Merge run reports into one flat CSV.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    /// Line-delimited tweet records.
    #[arg(long, value_name = "FILE")]
    pub tweets: PathBuf,
    /// Line-delimited user profiles.
    #[arg(long, value_name = "FILE")]
    pub users: PathBuf,
    /// Line-delimited per-user timelines (required for timeline features).
    #[arg(long, value_name = "FILE")]
    pub timelines: Option<PathBuf>,
    /// Line-delimited news labels.
    #[arg(long, value_name = "FILE")]
    pub labels: PathBuf,
    /// Output archive directory.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Node feature family: profile, timeline or combined [default: profile].
    #[arg(long)]
    pub feature_mode: Option<FeatureMode>,
    /// Time-window edge rule bound in hours, 1..=10 [default: 5].
    #[arg(long, value_name = "H")]
    pub window_h: Option<u32>,
    /// Also add follower edges (needs `follows` lists in users file).
    #[arg(long)]
    pub use_follow: bool,
    /// Early-detection clip: keep only the first N tweets per news item.
    #[arg(long, value_name = "N")]
    pub clip_tweets: Option<usize>,
    /// Early-detection clip: keep only the first H hours per news item.
    #[arg(long, value_name = "H")]
    pub clip_hours: Option<u32>,
    /// Fail on the first bad news item instead of skipping with a warning.
    #[arg(long)]
    pub strict: bool,
}

#[derive(Debug, Args)]
pub struct GenSynthArgs {
    /// Output directory; one subdirectory per regime.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Override the number of news items per regime [default: 400].
    #[arg(long, value_name = "N")]
    pub n_news: Option<usize>,
}

/// Model-shape flags shared by the training subcommands.
#[derive(Debug, Args)]
pub struct ModelArgs {
    /// Number of pooling levels, 2..=4 [default: 2].
    #[arg(long, value_name = "N")]
    pub pool_layers: Option<usize>,
    /// Width of each level's first propagation layer [default: 64].
    #[arg(long, value_name = "D")]
    pub hidden_dim: Option<usize>,
    /// Width of each level's embedding [default: 64].
    #[arg(long, value_name = "D")]
    pub embed_dim: Option<usize>,
    /// Cluster shrink factor per level [default: 0.25].
    #[arg(long, value_name = "R")]
    pub pool_ratio: Option<f64>,
    /// Assignment capacity bound [default: 2048].
    #[arg(long, value_name = "N")]
    pub max_nodes: Option<usize>,
}

/// Optimization flags shared by the training subcommands.
#[derive(Debug, Args)]
pub struct OptArgs {
    /// Maximum epochs per phase [default: 60].
    #[arg(long, value_name = "N")]
    pub epochs: Option<usize>,
    /// Minibatch size [default: 8].
    #[arg(long, value_name = "N")]
    pub batch_size: Option<usize>,
    /// Adam learning rate [default: 1e-3].
    #[arg(long)]
    pub lr: Option<f64>,
    /// Epochs without improvement before stopping [default: 10].
    #[arg(long, value_name = "N")]
    pub patience: Option<usize>,
    /// Seeded repeats to average [default: 5].
    #[arg(long, value_name = "N")]
    pub repeats: Option<u32>,
    /// Training fraction of the stratified split [default: 0.75].
    #[arg(long, value_name = "F")]
    pub train_frac: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset archive directory.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory for checkpoint and reports.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args)]
pub struct TrainIncrementalArgs {
    /// First (task-1) dataset archive directory.
    #[arg(long, value_name = "DIR")]
    pub data1: PathBuf,
    /// Second (task-2) dataset archive directory.
    #[arg(long, value_name = "DIR")]
    pub data2: PathBuf,
    /// Output directory for checkpoint and reports.
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Continual method: naive, gem or ewc [default: naive].
    #[arg(long)]
    pub method: Option<String>,
    /// GEM episodic memory size [default: 200].
    #[arg(long, value_name = "N")]
    pub mem_size: Option<usize>,
    /// EWC penalty strength [default: 100].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Graphs used to estimate the Fisher diagonal [default: 200].
    #[arg(long, value_name = "N")]
    pub fisher_samples: Option<usize>,
    /// Estimate the Fisher with stored labels instead of model samples.
    #[arg(long)]
    pub empirical_fisher: bool,
    /// Maximum epochs for phase 2 [default: same as --epochs].
    #[arg(long, value_name = "N")]
    pub phase2_epochs: Option<usize>,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub opt: OptArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Saved checkpoint file.
    #[arg(long, value_name = "FILE")]
    pub checkpoint: PathBuf,
    /// Dataset archive directory to evaluate on.
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Which task's split protocol to re-derive: 1 or 2 [default: 1].
    #[arg(long)]
    pub task: Option<u8>,
    /// Portion to evaluate: train, test or all [default: test].
    #[arg(long)]
    pub split: Option<EvalSplit>,
    /// Write metrics JSON here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Merged CSV output path.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    /// Report files (report.json) or run directories containing one.
    #[arg(required = true, value_name = "PATH")]
    pub inputs: Vec<PathBuf>,
}

// ---------------------------------------------------------------------------
// Entry points
// ---------------------------------------------------------------------------

/// Parses arguments from the process environment, runs the subcommand and
/// returns the exit code (diagnostics already printed to stderr).
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders --help/--version on stdout (success) and usage
            // errors on stderr; mirror that split in the exit code.
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {}", e.message);
            e.code
        }
    }
}

/// Runs one parsed invocation.
pub fn execute(cli: Cli) -> Result<(), CliError> {
    let cfg = match &cli.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let (seed, seed_explicit) = resolve_seed(cli.seed, &cfg)?;

    if let Some(jobs) = resolve_opt(cli.jobs, &cfg, "jobs")? {
        // Ignore AlreadyInitialized so that in-process callers (tests)
        // may execute several invocations.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global();
    }

    match cli.command {
        Command::Build(args) => cmd_build(&args, &cfg),
        Command::GenSynth(args) => cmd_gen_synth(&args, &cfg, seed, seed_explicit),
        Command::Train(args) => cmd_train(&args, &cfg, seed),
        Command::TrainIncremental(args) => cmd_train_incremental(&args, &cfg, seed),
        Command::Eval(args) => cmd_eval(&args, &cfg),
        Command::Report(args) => cmd_report(&args),
    }
}

// ---------------------------------------------------------------------------
// Subcommands
// ---------------------------------------------------------------------------

fn cmd_build(args: &BuildArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let defaults = BuildOptions::default();
    let clip_tweets = resolve_opt(args.clip_tweets, cfg, "clip-tweets")?;
    let clip_hours = resolve_opt(args.clip_hours, cfg, "clip-hours")?;
    let clip = match (clip_tweets, clip_hours) {
        (None, None) => None,
        (max_tweets, max_hours) => Some(ClipSpec {
            max_tweets,
            max_hours,
        }),
    };
    let opts = BuildOptions {
        feature_mode: resolve(args.feature_mode, cfg, "feature-mode", defaults.feature_mode)?,
        time_window_h: resolve(args.window_h, cfg, "window-h", defaults.time_window_h)?,
        use_follow: resolve_flag(args.use_follow, cfg, "use-follow")?,
        clip,
        strict: resolve_flag(args.strict, cfg, "strict")?,
    };

    let tweets = read_tweets(&args.tweets)?;
    let users = read_users(&args.users)?;
    let timelines = match &args.timelines {
        Some(path) => Some(read_timelines(path)?),
        None => None,
    };
    let labels = read_labels(&args.labels)?;

    let outcome = build_dataset(&tweets, &users, timelines.as_ref(), &labels, &opts)?;
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }
    save_dataset(&args.out, &outcome.dataset, None)?;
    let m = &outcome.dataset.manifest;
    eprintln!(
        "built {} graphs (d={}, mean nodes {:.1}, mean edges {:.1}) -> {}",
        m.graph_count,
        m.feature_dim,
        m.mean_nodes,
        m.mean_edges,
        args.out.display()
    );
    Ok(())
}

fn cmd_gen_synth(
    args: &GenSynthArgs,
    cfg: &FileConfig,
    seed: u64,
    seed_explicit: bool,
) -> Result<(), CliError> {
    let (mut a, mut b) = default_regimes();
    if let Some(n) = resolve_opt(args.n_news, cfg, "n-news")? {
        a.n_news = n;
        b.n_news = n;
    }
    // The built-in regimes carry their own seeds; an explicit base seed
    // re-derives both so the whole corpus moves together.
    if seed_explicit {
        a.seed = derive_seed(seed, 1);
        b.seed = derive_seed(seed, 2);
    }

    for regime in [&a, &b] {
        let dir = args.out.join(&regime.name);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;

        let (tweets, users, labels) = emit_records(regime)?;
        write_jsonl(dir.join("tweets.jsonl"), &tweets).map_err(io_err(&dir))?;
        let user_rows: Vec<_> = users.values().cloned().collect();
        write_jsonl(dir.join("users.jsonl"), &user_rows).map_err(io_err(&dir))?;
        let label_rows: Vec<_> = labels
            .iter()
            .map(|(news_id, &label)| LabelRecord {
                news_id: news_id.clone(),
                label,
            })
            .collect();
        write_jsonl(dir.join("labels.jsonl"), &label_rows).map_err(io_err(&dir))?;

        let (dataset, manifest) = generate(regime)?;
        save_dataset(&dir, &dataset, None)?;
        let gen_path = dir.join(GEN_MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&manifest)
            .map_err(|e| CliError::data(format!("{}: {e}", gen_path.display())))?;
        write_atomic(&gen_path, json.as_bytes()).map_err(io_err(&gen_path))?;

        eprintln!(
            "{}: {} graphs, mean nodes {:.1}, mean edges {:.1} -> {}",
            regime.name,
            manifest.graph_count,
            manifest.mean_nodes,
            manifest.mean_edges,
            dir.display()
        );
    }
    Ok(())
}

fn model_config(input_dim: usize, args: &ModelArgs, cfg: &FileConfig) -> Result<ModelConfig, CliError> {
    let mut m = ModelConfig::new(input_dim);
    m.pool_layers = resolve(args.pool_layers, cfg, "pool-layers", 2)?;
    m.hidden_dim = resolve(args.hidden_dim, cfg, "hidden-dim", m.hidden_dim)?;
    m.embed_dim = resolve(args.embed_dim, cfg, "embed-dim", m.embed_dim)?;
    m.pool_ratio = resolve(args.pool_ratio, cfg, "pool-ratio", m.pool_ratio)?;
    m.max_nodes = resolve(args.max_nodes, cfg, "max-nodes", m.max_nodes)?;
    m.validate()?;
    Ok(m)
}

fn train_options(args: &OptArgs, cfg: &FileConfig) -> Result<TrainOptions, CliError> {
    let d = TrainOptions::default();
    Ok(TrainOptions {
        epochs: resolve(args.epochs, cfg, "epochs", d.epochs)?,
        batch_size: resolve(args.batch_size, cfg, "batch-size", d.batch_size)?,
        lr: resolve(args.lr, cfg, "lr", d.lr)?,
        patience: resolve(args.patience, cfg, "patience", d.patience)?,
    })
}

fn experiment_spec(
    input_dim: usize,
    model: &ModelArgs,
    opt: &OptArgs,
    cfg: &FileConfig,
    seed: u64,
) -> Result<ExperimentSpec, CliError> {
    let mut spec = ExperimentSpec::new(model_config(input_dim, model, cfg)?);
    spec.seed = seed;
    spec.repeats = resolve(opt.repeats, cfg, "repeats", spec.repeats)?;
    spec.train_frac = resolve(opt.train_frac, cfg, "train-frac", spec.train_frac)?;
    spec.train = train_options(opt, cfg)?;
    spec.phase2 = spec.train;
    Ok(spec)
}

fn print_summary(report: &ExperimentReport) {
    for s in &report.summary {
        eprintln!(
            "phase {} {}: acc {:.3}±{:.3}  f1 {:.3}±{:.3}",
            s.phase, s.dataset, s.mean.accuracy, s.std.accuracy, s.mean.f1, s.std.f1
        );
    }
    if let Some(f) = report.forgetting() {
        eprintln!("task1 accuracy drop after phase 2 (forgetting): {f:.3}");
    }
}

fn write_outputs(
    out: &Path,
    report: &ExperimentReport,
    checkpoint: &Checkpoint,
) -> Result<(), CliError> {
    report.write(out)?;
    checkpoint.save(&out.join(CHECKPOINT_FILE))?;
    // The checkpoint captures the last repeat, so the per-epoch history
    // file covers that same repeat.
    if let Some(history) = report.histories.last() {
        let path = out.join(crate::harness::HISTORY_CSV);
        write_atomic(&path, history_csv(history).as_bytes()).map_err(io_err(&path))?;
    }
    Ok(())
}

fn cmd_train(args: &TrainArgs, cfg: &FileConfig, seed: u64) -> Result<(), CliError> {
    let (dataset, _) = load_dataset(&args.data)?;
    let spec = experiment_spec(dataset.feature_dim(), &args.model, &args.opt, cfg, seed)?;
    let (report, checkpoint) = run_single(&dataset, &spec)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_outputs(&args.out, &report, &checkpoint)?;
    print_summary(&report);
    eprintln!("wrote report and checkpoint -> {}", args.out.display());
    Ok(())
}

fn parse_method(args: &TrainIncrementalArgs, cfg: &FileConfig) -> Result<Method, CliError> {
    let name = match &args.method {
        Some(m) => m.clone(),
        None => cfg.get::<String>("method")?.unwrap_or_else(|| "naive".into()),
    };
    match name.as_str() {
        "naive" => Ok(Method::Naive),
        "gem" => Ok(Method::Gem {
            mem_size: resolve(args.mem_size, cfg, "mem-size", 200)?,
        }),
        "ewc" => Ok(Method::Ewc {
            lambda: resolve(args.lambda, cfg, "lambda", 100.0)?,
            fisher_samples: resolve(args.fisher_samples, cfg, "fisher-samples", 200)?,
            empirical_fisher: resolve_flag(args.empirical_fisher, cfg, "empirical-fisher")?,
        }),
        other => Err(CliError::config(format!(
            "unknown method `{other}` (expected naive, gem or ewc)"
        ))),
    }
}

fn cmd_train_incremental(
    args: &TrainIncrementalArgs,
    cfg: &FileConfig,
    seed: u64,
) -> Result<(), CliError> {
    let (d1, _) = load_dataset(&args.data1)?;
    let (d2, _) = load_dataset(&args.data2)?;
    let method = parse_method(args, cfg)?;
    let mut spec = experiment_spec(d1.feature_dim(), &args.model, &args.opt, cfg, seed)?;
    if let Some(e2) = resolve_opt(args.phase2_epochs, cfg, "phase2-epochs")? {
        spec.phase2.epochs = e2;
    }
    let (report, checkpoint) = run_incremental(&d1, &d2, &spec, method)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    write_outputs(&args.out, &report, &checkpoint)?;
    print_summary(&report);
    eprintln!("wrote report and checkpoint -> {}", args.out.display());
    Ok(())
}

fn cmd_eval(args: &EvalArgs, cfg: &FileConfig) -> Result<(), CliError> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let (dataset, _) = load_dataset(&args.data)?;
    let task = resolve(args.task, cfg, "task", 1)?;
    let split = resolve(args.split, cfg, "split", EvalSplit::Test)?;
    let detail = evaluate_checkpoint(&checkpoint, &dataset, task, split)?;
    let json = serde_json::to_string_pretty(&detail).expect("metrics serialize");
    match &args.out {
        Some(path) => {
            write_atomic(path, json.as_bytes()).map_err(io_err(path))?;
            eprintln!("wrote metrics -> {}", path.display());
        }
        None => println!("{json}"),
    }
    Ok(())
}

fn cmd_report(args: &ReportArgs) -> Result<(), CliError> {
    let mut merged = String::new();
    for input in &args.inputs {
        let path = if input.is_dir() {
            input.join(REPORT_JSON)
        } else {
            input.clone()
        };
        let text = std::fs::read_to_string(&path).map_err(io_err(&path))?;
        let report: ExperimentReport = serde_json::from_str(&text)
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let csv = report.csv();
        if merged.is_empty() {
            merged.push_str(&csv);
        } else {
            // Drop the repeated header line of subsequent reports.
            let body = csv.split_once('\n').map(|(_, b)| b).unwrap_or("");
            merged.push_str(body);
        }
    }
    write_atomic(&args.out, merged.as_bytes()).map_err(io_err(&args.out))?;
    eprintln!(
        "merged {} report(s) -> {} ({REPORT_CSV} format)",
        args.inputs.len(),
        args.out.display()
    );
    Ok(())
}
