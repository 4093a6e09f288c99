//! `epiwatch` command-line interface.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand, ValueEnum};
use epiwatch_core::TargetKind;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Core(#[from] epiwatch_core::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(epiwatch_core::Error::Divergence { .. }) => 3,
            _ => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "epiwatch",
    version,
    about = "Knowledge-graph epidemic forecasting and risk-factor discovery"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic snapshot/statistics corpus with planted drivers.
    GenSynth(GenSynthArgs),
    /// Train one model for a cutoff date and write a checkpoint.
    Train(TrainArgs),
    /// Walk-forward predictions over a range of cutoff dates.
    Predict(PredictArgs),
    /// Metrics and running error curves for a predictions file.
    Evaluate(EvaluateArgs),
    /// Rank entities by attention on each location's high-burden dates.
    Risk(RiskArgs),
    /// Compare analytic and finite-difference gradients on the built-in fixture.
    Gradcheck(GradcheckArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Daily snapshots, one JSON object per line.
    #[arg(long)]
    snapshots: PathBuf,
    /// Daily statistics CSV.
    #[arg(long)]
    stats: PathBuf,
}

#[derive(Debug, Args)]
struct ConfigArgs {
    /// Key-value config file (`key = value` per line).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Debug, Args)]
struct GenSynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value_t = 180)]
    days: usize,
    #[arg(long)]
    locations: Option<usize>,
    #[arg(long)]
    drivers: Option<usize>,
    #[arg(long)]
    lag: Option<usize>,
    #[arg(long)]
    effect: Option<f64>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    horizon: usize,
    #[arg(long, value_parser = parse_target)]
    target: TargetKind,
    #[arg(long)]
    seed: u64,
    /// Last date whose statistics may be used (default: last snapshot date).
    #[arg(long, value_parser = parse_date)]
    cutoff: Option<NaiveDate>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    config: ConfigArgs,
    /// Forecast horizons in days, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    horizon: Vec<usize>,
    #[arg(long, value_parser = parse_target)]
    target: TargetKind,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_parser = parse_date)]
    from: NaiveDate,
    #[arg(long, value_parser = parse_date)]
    to: NaiveDate,
    /// Use a trained checkpoint instead of walk-forward training.
    #[arg(long, conflicts_with_all = ["config", "set"])]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Statistics file; when given, naive baselines are scored on the same records.
    #[arg(long)]
    stats: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DenominatorArg {
    EdgeDates,
    AllDates,
}

#[derive(Debug, Args)]
struct RiskArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long)]
    entity_type: Option<String>,
    #[arg(long, value_enum, default_value_t = DenominatorArg::EdgeDates)]
    denominator: DenominatorArg,
    /// Restrict high-set candidates to dates on or after this one.
    #[arg(long, value_parser = parse_date)]
    from: Option<NaiveDate>,
    #[arg(long, value_parser = parse_date)]
    to: Option<NaiveDate>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = epiwatch_core::fixture::TINY_SEED)]
    seed: u64,
}

fn parse_target(s: &str) -> Result<TargetKind, String> {
    s.parse().map_err(|e: epiwatch_core::Error| e.to_string())
}

fn parse_date(s: &str) -> Result<NaiveDate, String> {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").map_err(|e| format!("invalid date `{s}` (expected YYYY-MM-DD): {e}"))
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenSynth(a) => commands::gen_synth(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Risk(a) => commands::risk(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
