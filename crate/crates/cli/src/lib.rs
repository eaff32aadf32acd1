//! `ccinsights` command line: one subcommand per pipeline stage, a
//! `pipeline` command that chains them, and `serve` for the HTTP service.

pub mod jobs;
pub mod service;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use ccinsights::config::{AppConfig, CONFIG_ENV};
use ccinsights::{Error, Gateway};
use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand, ValueEnum};

pub const EXIT_STAGE_FAILURE: i32 = 1;
pub const EXIT_BAD_INPUT: i32 = 2;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad configuration or missing/invalid input. Exit code 2.
    #[error("{0}")]
    Input(String),
    #[error(transparent)]
    Core(#[from] Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_BAD_INPUT,
            CliError::Core(e) => core_exit_code(e),
        }
    }
}

fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Parse { .. }
        | Error::DuplicateId(_)
        | Error::Validation(_)
        | Error::SchemaVersion { .. }
        | Error::CorruptModel(_)
        | Error::Unlabeled(_) => EXIT_BAD_INPUT,
        Error::Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => EXIT_BAD_INPUT,
        _ => EXIT_STAGE_FAILURE,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "ccinsights", version, about = "Call-driver generation, topic modeling and trend detection for call transcripts")]
pub struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Seed override. Required when no config file is given.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate one call driver per transcript.
    Drivers(DriversArgs),
    /// Prune transcript tokens to a target ratio.
    Compress(CompressArgs),
    /// Score call drivers regenerated from compressed transcripts.
    Sweep(SweepArgs),
    #[command(subcommand)]
    Topics(TopicsCommand),
    /// Assign new drivers to an existing topic model.
    Classify(ClassifyArgs),
    /// Close elapsed trend windows and report emerging topics.
    Trends(TrendsArgs),
    /// Trace drivers back to caller utterances and draft FAQs.
    Faq(FaqArgs),
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Compare serving costs for a workload.
    Cost(CostArgs),
    /// Run drivers, topics, labels, E2E scoring and FAQs in one go.
    Pipeline(PipelineArgs),
    /// Write seeded synthetic transcripts.
    Synth(SynthArgs),
    /// Run the HTTP service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct DriversArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-transcript failures as JSON lines. Printed to stderr when absent.
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompressArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `compression.target_ratio`.
    #[arg(long)]
    pub ratio: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    /// Reference drivers (JSON lines), paired by transcript id.
    #[arg(long)]
    pub refs: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1,0.7,0.5,0.33,0.25,0.2")]
    pub ratios: Vec<f64>,
    /// Rows as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum TopicsCommand {
    /// Cluster drivers into an unlabeled topic model.
    Build(TopicsBuildArgs),
    /// Label every cluster of a model.
    Label(TopicsLabelArgs),
}

#[derive(Debug, Args)]
pub struct TopicsBuildArgs {
    #[arg(long)]
    pub drivers: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `clustering.grid`, e.g. `5,10;1,5`.
    #[arg(long)]
    pub grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct TopicsLabelArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Defaults to overwriting `--model`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Trend state; created when missing.
    #[arg(long)]
    pub state: PathBuf,
    /// Drivers to assign (JSON lines).
    #[arg(long)]
    pub drivers: PathBuf,
    /// Assignments as JSON lines.
    #[arg(long)]
    pub out: PathBuf,
    /// Window length used when the state is created.
    #[arg(long, default_value = "24h", value_parser = humantime::parse_duration)]
    pub window: Duration,
    /// Start of the first window when the state is created. Defaults to the
    /// model's creation time.
    #[arg(long, value_parser = parse_time)]
    pub start: Option<DateTime<Utc>>,
}

#[derive(Debug, Args)]
pub struct TrendsArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long, default_value = "24h", value_parser = humantime::parse_duration)]
    pub window: Duration,
    /// Close windows ending at or before this time (RFC 3339). Defaults to now.
    #[arg(long, value_parser = parse_time)]
    pub now: Option<DateTime<Utc>>,
    /// Regroup the outlier pool before detection.
    #[arg(long)]
    pub recluster: bool,
    /// Events as JSON lines; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FaqArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub errors: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Table,
}

#[derive(Debug, Subcommand)]
pub enum EvalCommand {
    /// Entailment-based call-driver score.
    Cd(EvalCdArgs),
    /// Topic coherence score of a labeled model.
    E2e(EvalE2eArgs),
    /// Driver length histograms per model.
    Lengths(EvalLengthsArgs),
}

#[derive(Debug, Args)]
pub struct EvalCdArgs {
    /// Reference drivers (JSON lines).
    #[arg(long)]
    pub refs: PathBuf,
    /// Generated drivers (JSON lines), paired with references by transcript id.
    #[arg(long)]
    pub hyps: PathBuf,
    /// Overrides `metrics.alpha`.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Report only the raw positive-entailment rate.
    #[arg(long)]
    pub no_penalty: bool,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    /// Row name in table output.
    #[arg(long, default_value = "model")]
    pub name: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalE2eArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
    #[arg(long, default_value = "model")]
    pub name: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalLengthsArgs {
    /// `name=drivers.jsonl`, repeatable.
    #[arg(long = "series", required = true)]
    pub series: Vec<String>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct CostArgs {
    #[arg(long)]
    pub pricing: PathBuf,
    /// Overrides the workload's transcript count.
    #[arg(long)]
    pub transcripts: Option<u64>,
    #[arg(long, value_enum, default_value = "table")]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct PipelineArgs {
    #[arg(long)]
    pub transcripts: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub state: PathBuf,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    #[arg(long, default_value = "24h", value_parser = humantime::parse_duration)]
    pub window: Duration,
}

pub fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("expected an RFC 3339 time: {e}"))
}

/// Loaded configuration and backends shared by every command.
pub struct Context {
    pub cfg: AppConfig,
    pub gw: Gateway,
}

impl Context {
    pub fn load(config: Option<&std::path::Path>, seed: Option<u64>) -> CliResult<Self> {
        let mut cfg = match (config, seed) {
            (Some(path), _) => AppConfig::load(path)?,
            (None, Some(seed)) => AppConfig::with_seed(seed),
            (None, None) => {
                return Err(CliError::Input(format!(
                    "a seed is required: pass --config <file> (or set {CONFIG_ENV}) or --seed <n>"
                )))
            }
        };
        if let Some(seed) = seed {
            cfg.seed = seed;
            cfg.drivers.seed = seed;
        }
        let gw = Gateway::from_config(&cfg.gateway)?;
        Ok(Context { cfg, gw })
    }
}

/// Runs one parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> i32 {
    match jobs::dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            let code = e.exit_code();
            tracing::error!(exit_code = code, error = %e, "command failed");
            eprintln!("error: {e}");
            code
        }
    }
}
