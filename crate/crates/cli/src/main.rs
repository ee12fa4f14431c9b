//! Command-line surface over the query pipelines: schema introspection,
//! planning, question answering, evaluation, sampling, and failure
//! forensics.

mod commands;
mod config;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use config::{Settings, TrafficMode};

#[derive(Debug, Parser)]
#[command(
    name = "dynaquery",
    version,
    about = "Natural-language querying over relational databases, with multimodal filtering"
)]
struct Cli {
    #[command(flatten)]
    globals: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML config file; flags and env vars override its values
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// database to query, e.g. sqlite:shop.db
    #[arg(long, global = true, env = "DQ_DB_URL", value_name = "URL")]
    pub db_url: Option<String>,
    /// model completion endpoint
    #[arg(long, global = true, env = "DQ_MODEL_URL", value_name = "URL")]
    pub model_url: Option<String>,
    /// model identifier stamped into requests and transcripts
    #[arg(long, global = true, env = "DQ_MODEL_ID", value_name = "ID")]
    pub model_id: Option<String>,
    /// bearer token for the model endpoint
    #[arg(long, global = true, env = "DQ_API_KEY", value_name = "KEY", hide_env_values = true)]
    pub api_key: Option<String>,
    /// embedding endpoint for the retrieval baseline
    #[arg(long, global = true, env = "DQ_EMBED_URL", value_name = "URL")]
    pub embed_url: Option<String>,
    /// remote decision endpoint for the multimodal pipeline
    #[arg(long, global = true, env = "DQ_CLASSIFIER_URL", value_name = "URL")]
    pub classifier_url: Option<String>,
    /// directory asset references resolve under
    #[arg(long, global = true, value_name = "DIR")]
    pub asset_root: Option<PathBuf>,
    /// semantic description file merged into the schema
    #[arg(long, global = true, value_name = "PATH")]
    pub enrich: Option<PathBuf>,
    /// transcript file for record and replay modes
    #[arg(long, global = true, value_name = "PATH")]
    pub transcript: Option<PathBuf>,
    /// model traffic mode
    #[arg(long, global = true, value_enum)]
    pub mode: Option<TrafficMode>,
    /// seed for sampling and record-order shuffling
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// artifact directory; defaults to runs/<timestamp>-seed<seed>
    #[arg(long, global = true, value_name = "DIR")]
    pub run_dir: Option<PathBuf>,
    /// how many schema chunks the retrieval baseline returns
    #[arg(long, global = true, value_name = "N")]
    pub retrieval_k: Option<usize>,
    /// per-query execution timeout in seconds
    #[arg(long, global = true, value_name = "SECS")]
    pub timeout_secs: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the introspected schema, optionally caching it to a file
    Introspect(IntrospectArgs),
    /// Plan a question into base and join tables without executing anything
    Plan(PlanArgs),
    /// Answer a question through the structured or multimodal pipeline
    Ask(AskArgs),
    /// Score predicted SQL against gold queries by executing both
    Eval(EvalArgs),
    /// Draw a stratified sample from a labeled gold file
    Sample(SampleArgs),
    /// Classify the failures recorded in an eval report
    Forensics(ForensicsArgs),
}

#[derive(Debug, Args)]
pub struct IntrospectArgs {
    /// also write the schema model as JSON
    #[arg(long, value_name = "PATH")]
    pub cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// natural-language question
    #[arg(long, short = 'q')]
    pub question: String,
    /// also rank schema chunks with the retrieval baseline
    #[arg(long)]
    pub baseline: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Pipeline {
    /// one generated, sanitized, executed SQL statement
    Sql,
    /// filtered join first, then per-record reasoning over linked assets
    Mm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum DeciderKind {
    Rule,
    Descriptive,
    Remote,
}

#[derive(Debug, Args)]
pub struct AskArgs {
    /// natural-language question
    #[arg(long, short = 'q')]
    pub question: String,
    /// which pipeline answers; there is no automatic routing
    #[arg(long, value_enum)]
    pub pipeline: Pipeline,
    /// decision module for the multimodal pipeline
    #[arg(long, value_enum, default_value = "rule")]
    pub decider: DeciderKind,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// gold queries, one JSON object per line
    #[arg(long, value_name = "PATH")]
    pub gold: PathBuf,
    /// predicted queries, one JSON object per line
    #[arg(long, value_name = "PATH", conflicts_with = "generate")]
    pub pred: Option<PathBuf>,
    /// generate predictions with the structured pipeline instead
    #[arg(long)]
    pub generate: bool,
    /// measure runtimes rigorously (five repeats) for the efficiency score
    #[arg(long)]
    pub ves: bool,
    /// evaluate only a stratified sample of this size
    #[arg(long, value_name = "N")]
    pub sample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// gold queries, one JSON object per line
    #[arg(long, value_name = "PATH")]
    pub gold: PathBuf,
    /// sample size
    #[arg(long, short = 'n')]
    pub size: usize,
    /// run the representativeness check on the drawn sample
    #[arg(long)]
    pub check: bool,
}

#[derive(Debug, Args)]
pub struct ForensicsArgs {
    /// eval report JSON produced by the eval command
    #[arg(long, value_name = "PATH")]
    pub report: PathBuf,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let file = config::load_file(cli.globals.config.as_deref())?;
    let settings = Settings::resolve(&cli.globals, file)?;
    match &cli.command {
        Command::Introspect(args) => commands::introspect(&settings, args),
        Command::Plan(args) => commands::plan(&settings, args),
        Command::Ask(args) => commands::ask(&settings, args),
        Command::Eval(args) => commands::eval(&settings, args),
        Command::Sample(args) => commands::sample(&settings, args),
        Command::Forensics(args) => commands::forensics(&settings, args),
    }
}
