//! `fracuc`: simulate, fit, filter and diagnose fractionally integrated
//! unobserved-components models from the command line.

mod commands;
mod data;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{CliError, ErrorReport};

#[derive(Parser, Debug)]
#[command(name = "fracuc", version, about, args_override_self = true)]
pub struct Cli {
    /// Worker threads for start search and Monte Carlo replications.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Draw a sample from the model.
    Simulate(SimulateArgs),
    /// Maximum-likelihood estimation.
    Fit(FitArgs),
    /// Filtered trend, band, idiosyncratic parts and shocks at a fitted
    /// parameter.
    Extract(ExtractArgs),
    /// Smoothed periodogram, exact local Whittle and whiteness checks.
    Diagnose(DiagnoseArgs),
    /// Monte Carlo experiment.
    Mc(McArgs),
    /// Exact versus fast filter timings.
    Bench(BenchArgs),
    /// Build an ARMA approximation table.
    Table(TableArgs),
    /// Re-run a command from its manifest.
    Rerun(RerunArgs),
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// CSV file(s) with a `date` column; several files are joined on date.
    #[arg(long = "data", required = true, num_args = 1..)]
    pub data: Vec<PathBuf>,
    /// Replace levels by `100 * diff(log(level))`.
    #[arg(long)]
    pub log_diff: bool,
    #[arg(long)]
    pub from: Option<String>,
    #[arg(long)]
    pub to: Option<String>,
    /// With `--log-diff`, keep the first month of the range by differencing
    /// against the level before it.
    #[arg(long)]
    pub keep_first: bool,
}

#[derive(Args, Debug, Clone)]
pub struct ThetaArgs {
    #[arg(long)]
    pub b: f64,
    /// Loadings, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub beta: Vec<f64>,
    /// Idiosyncratic variances, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sigma: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub theta: ThetaArgs,
    #[arg(long)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// First month of the synthetic date column.
    #[arg(long, default_value = "2000-01")]
    pub start: String,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum ModeArg {
    Truncation,
    Arma,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum EngineArg {
    Structured,
    Corrected,
    Uncorrected,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum IdentArg {
    SigmaEtaUnity,
    FirstLoadingUnity,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// JSON fit configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long, value_enum)]
    pub engine: Option<EngineArg>,
    #[arg(long, value_enum)]
    pub identification: Option<IdentArg>,
    #[arg(long)]
    pub n_starts: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub start_iters: Option<u64>,
    /// Hold `b` fixed at this value.
    #[arg(long, conflicts_with = "i1")]
    pub fix_b: Option<f64>,
    /// Unit-root benchmark: `b = 1`.
    #[arg(long)]
    pub i1: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    /// ARMA approximation table (default: `$FRACUC_ARMA_TABLE`, then the
    /// bundled table).
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct ExtractArgs {
    /// `fit.json` written by `fit`.
    #[arg(long)]
    pub fit: PathBuf,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct DiagnoseArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Columns to analyse (default: all).
    #[arg(long, value_delimiter = ',')]
    pub columns: Vec<String>,
    /// Daniell half-width (default: `floor(sqrt(n))`).
    #[arg(long)]
    pub bandwidth: Option<usize>,
    /// Local Whittle frequencies (default: `floor(n^0.65)`).
    #[arg(long)]
    pub elw_m: Option<usize>,
    #[arg(long, default_value_t = fracuc::diagnostics::DEFAULT_LB_LAGS)]
    pub lags: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
pub enum TargetArg {
    Consistency,
    Normality,
    RotationRate,
    MdsCheck,
    Speed,
}

#[derive(Args, Debug)]
pub struct McArgs {
    /// JSON design; flags override its fields.
    #[arg(long)]
    pub design: Option<PathBuf>,
    #[arg(long)]
    pub b: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    pub beta: Vec<f64>,
    #[arg(long, value_delimiter = ',')]
    pub sigma: Vec<f64>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Vec<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_enum, value_delimiter = ',')]
    pub targets: Vec<TargetArg>,
    #[arg(long)]
    pub n_starts: Option<usize>,
    #[arg(long)]
    pub top_k: Option<usize>,
    #[arg(long)]
    pub m: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct BenchArgs {
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "696")]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    pub p: usize,
    #[arg(long, default_value_t = 4)]
    pub m: usize,
    #[arg(long, default_value_t = 0.476)]
    pub b: f64,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Runs of the dense exact filter (slow at large n).
    #[arg(long, default_value_t = 1)]
    pub exact_repeats: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct TableArgs {
    #[arg(long, default_value_t = fracuc::arma_map::DEFAULT_ORDER)]
    pub m: usize,
    #[arg(long, default_value_t = fracuc::arma_map::DEFAULT_HORIZON)]
    pub horizon: usize,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Write the artifacts here instead of the recorded directory.
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate(_) => "simulate",
            Command::Fit(_) => "fit",
            Command::Extract(_) => "extract",
            Command::Diagnose(_) => "diagnose",
            Command::Mc(_) => "mc",
            Command::Bench(_) => "bench",
            Command::Table(_) => "table",
            Command::Rerun(_) => "rerun",
        }
    }
}

fn report(command: &str, e: &CliError) -> ExitCode {
    let rep = ErrorReport {
        error: "fracuc",
        kind: e.kind(),
        command,
        message: e.to_string(),
    };
    eprintln!("{}", serde_json::to_string(&rep).unwrap_or_else(|_| e.to_string()));
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => return report("parse", &CliError::Usage(e.kind().to_string() + ": " + e.render().to_string().trim())),
    };
    let name = cli.command.name();
    match commands::run(cli, argv[1..].to_vec()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(name, &e),
    }
}
