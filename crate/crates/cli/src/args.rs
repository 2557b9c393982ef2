use std::path::PathBuf;

use clap::{ArgAction, ArgGroup, Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "curlab",
    version,
    about = "Data-curation scaling laboratory: filters, junk injection, run-log analysis, scaling laws and theory checks",
    args_override_self = true
)]
pub struct Cli {
    /// Worker threads for parallel stages (default: logical core count; 1 is fully sequential).
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    /// JSON file of default flag values; command-line flags win.
    #[arg(long, global = true, value_name = "JSON")]
    pub config: Option<PathBuf>,

    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Token counter: `whitespace` or `bytes4`.
    #[arg(long, global = true, default_value = "whitespace")]
    pub counter: String,

    /// More log output (repeatable).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample a token-budgeted pool from document JSONL files.
    Sample(SampleArgs),
    /// Run a filtering pipeline over a pool.
    Filter(FilterArgs),
    /// Add random-string or shuffled-word junk to a pool.
    Inject(InjectArgs),
    /// Validate run logs and merge them into one JSONL store.
    Ingest(IngestArgs),
    /// Validate run logs without writing anything.
    Validate(ValidateArgs),
    /// Per-run summary table.
    Report(ReportArgs),
    /// Compute-vs-loss Pareto frontier.
    Pareto(ParetoArgs),
    /// Pool-vs-filtered crossing points.
    Crossing(CrossingArgs),
    /// Fit a compute threshold law from crossings.
    ScalingLaw(ScalingLawArgs),
    /// Evaluate a fitted threshold law at a pool size.
    Extrapolate(ExtrapolateArgs),
    /// Mean loss over the first t context positions.
    SliceLoss(SliceLossArgs),
    /// Numerically check the rank-necessity result or the filter-improvement identity.
    VerifyTheory(VerifyTheoryArgs),
    /// Keyword-match documents to QA items and classify the matches with a judge.
    Judge(JudgeArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Sample(_) => "sample",
            Command::Filter(_) => "filter",
            Command::Inject(_) => "inject",
            Command::Ingest(_) => "ingest",
            Command::Validate(_) => "validate",
            Command::Report(_) => "report",
            Command::Pareto(_) => "pareto",
            Command::Crossing(_) => "crossing",
            Command::ScalingLaw(_) => "scaling-law",
            Command::Extrapolate(_) => "extrapolate",
            Command::SliceLoss(_) => "slice-loss",
            Command::VerifyTheory(_) => "verify-theory",
            Command::Judge(_) => "judge",
        }
    }
}

pub const SUBCOMMANDS: [&str; 13] = [
    "sample",
    "filter",
    "inject",
    "ingest",
    "validate",
    "report",
    "pareto",
    "crossing",
    "scaling-law",
    "extrapolate",
    "slice-loss",
    "verify-theory",
    "judge",
];

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Document JSONL files, read in order.
    #[arg(long, required = true, num_args = 1.., action = ArgAction::Set)]
    pub input: Vec<PathBuf>,
    #[arg(long)]
    pub target_tokens: u64,
    /// Pool label (default: `pool-<target>`).
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// Preset name (english, repetition, stopword, refinedweb, dclm_baseline) or a pipeline JSON file.
    #[arg(long, default_value = "refinedweb")]
    pub pipeline: String,
    /// Threshold profile (gopher, strict, lenient); replaces thresholds from the pipeline file.
    #[arg(long)]
    pub profile: Option<String>,
    /// Filtered pool JSONL.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Stage statistics CSV (default: `<output stem>.stats.csv`).
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// Per-document verdicts JSONL.
    #[arg(long)]
    pub outcomes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(long)]
    pub pool: PathBuf,
    /// `random` (random strings) or `shuffled` (word-shuffled documents).
    #[arg(long)]
    pub kind: String,
    /// Junk tokens per pool token, e.g. 2 for +200%.
    #[arg(long)]
    pub ratio: f64,
    /// Documents to shuffle for `shuffled` junk (default: the pool itself, cycled).
    #[arg(long)]
    pub source: Option<PathBuf>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct RunsInput {
    /// Run-record JSONL files.
    #[arg(long, required = true, num_args = 1.., action = ArgAction::Set)]
    pub runs: Vec<PathBuf>,
    /// Eval sets to average (default: sets present in every record).
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set)]
    pub eval_sets: Vec<String>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: RunsInput,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: RunsInput,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub input: RunsInput,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ParetoArgs {
    #[command(flatten)]
    pub input: RunsInput,
    /// One frontier per dataset label instead of a single global frontier.
    #[arg(long)]
    pub by_label: bool,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CrossingArgs {
    /// Runs trained on unfiltered pools.
    #[arg(long, required = true, num_args = 1.., action = ArgAction::Set)]
    pub pool_runs: Vec<PathBuf>,
    /// Runs trained on filtered data; their best loss is the target.
    #[arg(long, required = true, num_args = 1.., action = ArgAction::Set)]
    pub filtered_runs: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', num_args = 1.., action = ArgAction::Set)]
    pub eval_sets: Vec<String>,
    #[arg(long, short)]
    pub output: PathBuf,
    /// Full crossing records with power-law fits, as JSON.
    #[arg(long)]
    pub details: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Method {
    /// Fixed tokens per non-embedding parameter.
    Tpp,
    /// Fixed number of epochs over the pool.
    Epoch,
}

#[derive(Debug, Args)]
pub struct ScalingLawArgs {
    /// Crossings CSV from `crossing`.
    #[arg(long)]
    pub crossings: PathBuf,
    #[arg(long, value_enum)]
    pub method: Method,
    /// Tokens per non-embedding parameter for `tpp`.
    #[arg(long, default_value_t = curlab::scaling::DEFAULT_TOKENS_PER_PARAM)]
    pub ratio: f64,
    /// Epoch budget for `epoch`.
    #[arg(long, default_value_t = curlab::scaling::DEFAULT_EPOCHS)]
    pub epochs: f64,
    /// Model configurations JSON (default: bundled reference models).
    #[arg(long)]
    pub models: Option<PathBuf>,
    /// Pool size for the extrapolated compute in the summary.
    #[arg(long, default_value_t = 240e12)]
    pub pool_tokens: f64,
    /// Threshold points CSV.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Summary JSON (default: `<output stem>.summary.json`).
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExtrapolateArgs {
    /// Summary JSON from `scaling-law`.
    #[arg(long)]
    pub law: PathBuf,
    #[arg(long, required = true, num_args = 1.., action = ArgAction::Set)]
    pub pool_tokens: Vec<f64>,
    /// JSON output (default: stdout only).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SliceLossArgs {
    /// Per-position loss JSON files (`{"position_losses": [...], "context_length": 1024}`).
    #[arg(long, required = true, num_args = 1.., action = ArgAction::Set)]
    pub slice: Vec<PathBuf>,
    /// Prefix lengths (default: powers of two up to the context length, plus the full context).
    #[arg(long = "t", value_delimiter = ',', num_args = 1.., action = ArgAction::Set)]
    pub positions: Vec<usize>,
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("check").required(true).args(["prop1", "filter_fact"])))]
pub struct VerifyTheoryArgs {
    /// Gradient descent against the closed-form rank-r minimum loss.
    #[arg(long)]
    pub prop1: bool,
    /// Brute-force against closed-form KL improvement of a filter.
    #[arg(long)]
    pub filter_fact: bool,
    #[arg(long, default_value_t = 20)]
    pub trials: usize,
    /// Absolute tolerance (default: 1e-4 for --prop1, 1e-12 for --filter-fact).
    #[arg(long)]
    pub tol: Option<f64>,
    /// Gradient steps per restart.
    #[arg(long, default_value_t = 200_000)]
    pub steps: usize,
    #[arg(long, default_value_t = 3)]
    pub restarts: usize,
    /// JSON output with every verdict and the aggregate.
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("backend").required(true).args(["mock", "endpoint"])))]
pub struct JudgeArgs {
    /// QA items JSONL.
    #[arg(long)]
    pub qa: PathBuf,
    /// Document pool JSONL.
    #[arg(long)]
    pub pool: PathBuf,
    /// Offline judge: `keyword` heuristic or a fixed label (support, refute, related, unrelated).
    #[arg(long, num_args = 0..=1, default_missing_value = "keyword")]
    pub mock: Option<String>,
    /// Chat-completion endpoint URL; the key is read from JUDGE_API_KEY.
    #[arg(long)]
    pub endpoint: Option<String>,
    #[arg(long, default_value = "judge")]
    pub model: String,
    #[arg(long, default_value_t = 60.0)]
    pub timeout_secs: f64,
    #[arg(long, default_value_t = 8)]
    pub max_concurrency: usize,
    #[arg(long, default_value_t = 3)]
    pub max_attempts: u32,
    #[arg(long, default_value_t = 500)]
    pub backoff_ms: u64,
    /// Judgements JSONL.
    #[arg(long, short)]
    pub output: PathBuf,
    /// Per-subject verdict means CSV (default: `<output stem>.aggregate.csv`).
    #[arg(long)]
    pub aggregate: Option<PathBuf>,
}
