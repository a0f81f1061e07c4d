//! `intent`: dataset generation, training, evaluation, cluster sweeps and
//! inspection for the crossing-intent pipeline.

mod commands;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::settings::ConfigOverrides;

#[derive(Parser, Debug)]
#[command(name = "intent", version, about = "Pedestrian crossing-intent pipeline")]
struct Cli {
    /// Seed for generation, initialisation, splitting and shuffling.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// JSON file with pipeline configuration fields; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory for reports, checkpoints and manifests.
    #[arg(long, global = true, env = "INTENT_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset with planted segments.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint and training report.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Train one model per cluster count and tabulate held-out metrics.
    SweepM(SweepArgs),
    /// Dump density profile, events and attention trace for one sample.
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct SynthArgs {
    /// Output dataset path (JSON lines); defaults to `<out-dir>/synthetic.jsonl`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Planted segments per sample.
    #[arg(long, default_value_t = 3)]
    segments: usize,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long)]
    min_segment_len: Option<usize>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    /// Output directory; defaults to `--out-dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Split {
    All,
    Train,
    Val,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Which part of the training split to evaluate on.
    #[arg(long, value_enum, default_value_t = Split::All)]
    split: Split,
    /// Report path; defaults to `<out-dir>/eval.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated cluster counts.
    #[arg(long, value_delimiter = ',', default_values_t = [2usize, 3, 4, 5])]
    m_list: Vec<usize>,
    /// Table path; defaults to `<out-dir>/sweep.json`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args, Debug)]
struct InspectArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    sample_id: String,
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dump path; printed to standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code())
        }
    }
}
