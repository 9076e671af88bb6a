//! `mindelay` command-line front end.
//!
//! Exit codes: 0 success, 1 usage, 2 data error, 3 configuration error.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mindelay_core::synth::Benchmark;
use mindelay_core::Mode;

#[derive(Debug, Parser)]
#[command(name = "mindelay", version, about = "Minimum-delay object detection over detector streams")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic stream and its ground truth from a scenario spec.
    Synth(SynthArgs),
    /// Run the detector over a stream.
    Detect(DetectArgs),
    /// Score declarations against ground truth.
    Eval(EvalArgs),
    /// FAR-vs-delay curve over a threshold grid.
    Sweep(SweepArgs),
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// Scenario spec (JSON).
    #[arg(long)]
    spec: std::path::PathBuf,
    /// Output stream (JSON lines).
    #[arg(long)]
    stream: std::path::PathBuf,
    /// Output ground truth (JSON).
    #[arg(long)]
    truth: std::path::PathBuf,
}

/// Detector tunables shared by `detect` and `sweep`.
#[derive(Debug, Args, Clone)]
struct DetectorFlags {
    #[arg(long, default_value_t = 0.5)]
    iou_lim: f64,
    /// Evidence constant C; defaults to twice the largest overlapping
    /// detection mass in the input (at least 1).
    #[arg(long)]
    c: Option<f64>,
    #[arg(long, default_value_t = mindelay_core::DetectorConfig::DEFAULT_LAMBDA)]
    lambda: f64,
    #[arg(long, default_value = "recursive")]
    mode: Mode,
    #[arg(long, default_value_t = 0.5)]
    nms_iou: f64,
    #[arg(long, default_value_t = 2)]
    map_sweeps: usize,
    /// Comma-separated class priors, background first (default: uniform).
    #[arg(long, value_delimiter = ',')]
    priors: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct DetectArgs {
    #[arg(long)]
    stream: std::path::PathBuf,
    /// Declarations output (JSON lines).
    #[arg(long)]
    out: std::path::PathBuf,
    /// Optional per-frame timing log (CSV).
    #[arg(long)]
    timing: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 3.0)]
    threshold: f64,
    /// Remove a trajectory once it is declared.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    retire: bool,
    #[command(flatten)]
    detector: DetectorFlags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum ReportFormat {
    Pretty,
    Csv,
    Json,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    declarations: std::path::PathBuf,
    #[arg(long)]
    truth: std::path::PathBuf,
    #[arg(long, default_value_t = 0.5)]
    iou_lim: f64,
    /// Threshold recorded in the report.
    #[arg(long, default_value_t = 0.0)]
    threshold: f64,
    #[arg(long, value_enum, default_value_t = ReportFormat::Pretty)]
    format: ReportFormat,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
enum Strategy {
    /// Record statistic paths once and threshold afterwards (retire off).
    PostHoc,
    /// Re-run the detector per threshold, honouring --retire.
    Rerun,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// Stream files; pair each with a --truth in the same order.
    #[arg(long)]
    stream: Vec<std::path::PathBuf>,
    #[arg(long)]
    truth: Vec<std::path::PathBuf>,
    /// Use a generated benchmark instead of files (mixed | single-object).
    #[arg(long, conflicts_with_all = ["stream", "truth"])]
    benchmark: Option<Benchmark>,
    #[arg(long, default_value_t = 200)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Comma-separated detector thresholds.
    #[arg(long, value_delimiter = ',', conflicts_with = "grid")]
    thresholds: Option<Vec<f64>>,
    /// Geometric grid `lo:hi:n` of detector thresholds.
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_enum, default_value_t = Strategy::PostHoc)]
    strategy: Strategy,
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    retire: bool,
    #[command(flatten)]
    detector: DetectorFlags,
    /// Also sweep the single-frame baseline.
    #[arg(long)]
    baseline: bool,
    /// Linear grid `lo:hi:n` of baseline score thresholds.
    #[arg(long, default_value = "0.05:0.95:19")]
    baseline_grid: String,
    /// Baseline curve output (CSV); stdout after the detector curve if omitted.
    #[arg(long)]
    baseline_out: Option<std::path::PathBuf>,
    /// Detector curve output (CSV); stdout if omitted.
    #[arg(long)]
    out: Option<std::path::PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    jobs: Option<usize>,
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
    let result = match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Detect(a) => commands::detect(a),
        Command::Eval(a) => commands::eval(a),
        Command::Sweep(a) => commands::sweep(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(commands::exit_code(&e))
        }
    }
}
