//! `autolabel`: simulate detections, threshold/refine them into labels, and
//! evaluate against truth.
//!
//! Exit codes: 0 success, 2 usage/config, 3 I/O, 4 invalid data.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use autolabel_core::labels::SubsetSpec;
use clap::{Args, Parser, Subcommand};

use crate::error::CliError;

/// Caps the worker pool when set to a positive integer.
const WORKERS_ENV: &str = "AUTOLABEL_WORKERS";

#[derive(Debug, Parser)]
#[command(
    name = "autolabel",
    version,
    about = "Confidence-threshold and temporal auto-labeling toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic truth and detector output.
    Simulate(SimulateArgs),
    /// Filter detections by confidence, optionally refine temporally.
    Autolabel(AutolabelArgs),
    /// Precision/recall/F1 over candidate thresholds.
    Sweep(SweepArgs),
    /// AP_BEV / AP_3D overall and per weather condition.
    Eval(EvalArgs),
    /// Combine eval CSVs into one markdown table.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AutolabelArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    refine: bool,
    #[arg(long)]
    match_iou: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Comma-separated candidate thresholds [default: 0.1,0.3,0.5].
    #[arg(long, value_delimiter = ',')]
    taus: Option<Vec<f64>>,
    #[arg(long)]
    match_iou: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dets: Option<PathBuf>,
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Match threshold [default: 0.3].
    #[arg(long)]
    iou: Option<f64>,
    /// Evaluated class [default: Sedan].
    #[arg(long)]
    class: Option<String>,
    #[arg(long)]
    subset: Option<SubsetSpec>,
    /// Also write PR curves as SVG.
    #[arg(long)]
    svg: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Eval CSVs as `name=path` or bare paths.
    inputs: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn init_workers() -> Result<(), CliError> {
    let Ok(raw) = std::env::var(WORKERS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("{WORKERS_ENV}={raw:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("{WORKERS_ENV}: {e}")))
}

fn run(cli: Cli) -> Result<(), CliError> {
    init_workers()?;
    match cli.command {
        Command::Simulate(a) => commands::simulate(a),
        Command::Autolabel(a) => commands::autolabel(a),
        Command::Sweep(a) => commands::sweep(a),
        Command::Eval(a) => commands::eval(a),
        Command::Report(a) => commands::report(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("autolabel: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
