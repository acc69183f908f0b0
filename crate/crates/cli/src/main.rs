//! `hrtf-field`: generate synthetic HRTF datasets, train and evaluate
//! interpolation models, and export plot data.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.

mod commands;
mod plot;
mod settings;

use std::fmt;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// Invalid flags, flag combinations or config file contents.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

#[derive(Parser)]
#[command(name = "hrtf-field", version, about = "HRTF spatial interpolation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic dataset file.
    GenData(GenDataArgs),
    /// Train a model with cross-validation (or on all subjects).
    Train(TrainArgs),
    /// Score a checkpoint or the linear baseline on a dataset.
    Eval(EvalArgs),
    /// Export a frequency x angle magnitude map as CSV and PGM.
    Plot(PlotArgs),
    /// Cross-validate all four variants with one configuration.
    Ablation(AblationArgs),
    /// Sweep the neighbor count N and radius delta.
    Study(StudyArgs),
}

#[derive(Args)]
pub struct GenDataArgs {
    /// `key = value` file with defaults for any of these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Grid layout: quasi, geo or file.
    #[arg(long)]
    pub grid: Option<String>,
    /// Number of points of a quasi-uniform grid.
    #[arg(long)]
    pub points: Option<usize>,
    /// Elevation step of a geographical grid, degrees.
    #[arg(long)]
    pub step_el: Option<f64>,
    /// Great-circle azimuth step of a geographical grid, degrees.
    #[arg(long)]
    pub step_az: Option<f64>,
    /// Sphere radius, meters.
    #[arg(long)]
    pub radius: Option<f64>,
    /// Grid file for `--grid file`.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    #[arg(long)]
    pub subjects: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the grid to this path.
    #[arg(long)]
    pub grid_out: Option<PathBuf>,
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

/// Optimizer and neighborhood options shared by training commands.
#[derive(Args, Clone)]
pub struct TrainOpts {
    /// `key = value` file with defaults for any of these options.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// a, b, c1 or c2.
    #[arg(long)]
    pub variant: Option<String>,
    /// Neighbors per estimate.
    #[arg(long, short = 'n')]
    pub n: Option<usize>,
    /// Neighborhood radius, meters.
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub beta1: Option<f64>,
    #[arg(long)]
    pub beta2: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Epochs without improvement before the learning rate is halved.
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub lr_halving: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Run name; outputs go to `<runs-dir>/<name>`.
    #[arg(long)]
    pub name: Option<String>,
    #[arg(long)]
    pub runs_dir: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub opts: TrainOpts,
    /// Train one model on every subject instead of cross-validating.
    #[arg(long)]
    pub all: bool,
}

/// Reference-grid options shared by evaluation commands.
#[derive(Args, Clone)]
pub struct EvalOpts {
    /// Keep every T-th grid point as a reference.
    #[arg(long)]
    pub downsample: Option<usize>,
    /// Tolerance for plane membership, degrees.
    #[arg(long)]
    pub plane_tol: Option<f64>,
    /// Allow a reference at the target position to be used.
    #[arg(long)]
    pub include_coincident: bool,
}

#[derive(Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Evaluate in-plane linear interpolation instead of a model.
    #[arg(long)]
    pub baseline: bool,
    /// Expected variant; rejects checkpoints of another variant.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long, short = 'n')]
    pub n: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    /// Comma-separated subject ids (default: all).
    #[arg(long)]
    pub subjects: Option<String>,
    #[command(flatten)]
    pub eval: EvalOpts,
    /// Output directory (default: the checkpoint's directory, or
    /// `runs/baseline`).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct PlotArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Subject id (default: the first subject).
    #[arg(long)]
    pub subject: Option<String>,
    /// horizontal, median or frontal.
    #[arg(long)]
    pub plane: Option<String>,
    /// truth, model, baseline or nearest.
    #[arg(long)]
    pub source: Option<String>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, short = 'n')]
    pub n: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[command(flatten)]
    pub eval: EvalOpts,
    /// Fixed dB range `LO:HI` for the image (default: data range).
    #[arg(long, allow_hyphen_values = true)]
    pub range: Option<String>,
    /// Output prefix; writes `<prefix>.csv`, `<prefix>.angles.csv` and
    /// `<prefix>.pgm`.
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AblationArgs {
    #[command(flatten)]
    pub opts: TrainOpts,
    #[command(flatten)]
    pub eval: EvalOpts,
}

#[derive(Args)]
pub struct StudyArgs {
    #[command(flatten)]
    pub opts: TrainOpts,
    #[command(flatten)]
    pub eval: EvalOpts,
    /// Neighbor counts, e.g. `2,4,8`.
    #[arg(long)]
    pub n_list: Option<String>,
    /// Radii in meters, e.g. `0.2,0.3,0.5`.
    #[arg(long)]
    pub delta_list: Option<String>,
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if cause.downcast_ref::<UsageError>().is_some() {
            return 1;
        }
        if let Some(e) = cause.downcast_ref::<hrtf_field::Error>() {
            return match e {
                hrtf_field::Error::Config(_) => 1,
                hrtf_field::Error::NonFinite { .. } => 3,
                _ => 2,
            };
        }
    }
    2
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::GenData(a) => commands::gen_data(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Plot(a) => plot::run(a),
        Command::Ablation(a) => commands::ablation(a),
        Command::Study(a) => commands::study(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
