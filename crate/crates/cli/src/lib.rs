//! Command-line driver: dataset synthesis, training, evaluation, gradient
//! checking, latency benchmarking and trajectory export.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on runtime failures.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};

pub use config::{merge_config, parse_config};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "capsule-pose",
    version,
    about = "Camera pose regression for capsule endoscopy",
    args_override_self = true
)]
pub struct Cli {
    /// File of `key = value` lines using the long flag names; flags given on
    /// the command line take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic pose-labelled dataset.
    Synth(SynthArgs),
    /// Train a pose network.
    Train(TrainArgs),
    /// Evaluate a trained network against ground truth.
    Eval(EvalArgs),
    /// Check every operator gradient against finite differences.
    Gradcheck(GradcheckArgs),
    /// Measure single-frame inference latency.
    Bench(BenchArgs),
    /// Write a trajectory as CSV or SVG.
    Export(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Arch {
    /// 64x64 input, channels divided by 4.
    Desk,
    /// 224x224 input, full channel widths.
    Reference,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Trajectory {
    SmoothLoop,
    FastRotation,
    LargeTranslation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Report {
    Text,
    Csv,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Svg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Precision {
    Double,
    Single,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Random seed of the trajectory.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Number of frames (at least 2).
    #[arg(long, default_value_t = 2000)]
    pub frames: usize,
    /// Image size as `N` or `HxW`.
    #[arg(long, default_value = "64")]
    pub size: String,
    #[arg(long, value_enum, default_value_t = Trajectory::SmoothLoop)]
    pub trajectory: Trajectory,
    /// Distorted copies to add after each frame.
    #[arg(long, default_value_t = 0)]
    pub augment: usize,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Path of the final (best validation) weights.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    /// Per-epoch learning-rate factor.
    #[arg(long, default_value_t = 0.95)]
    pub lr_decay: f64,
    /// Rotation weight, or `auto` to derive it from the training poses.
    #[arg(long, default_value = "250")]
    pub beta: String,
    /// Weights to start from; the stem then trains at a tenth of the rate.
    #[arg(long, value_name = "CKPT")]
    pub pretrained: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Epochs without validation improvement before stopping; 0 disables.
    #[arg(long, default_value_t = 10)]
    pub patience: usize,
    /// Fraction of frames, from the start of the sequence, used for training.
    #[arg(long, default_value_t = 0.7)]
    pub split: f64,
    #[arg(long, value_enum, default_value_t = Arch::Desk)]
    pub arch: Arch,
    /// Per-epoch log; defaults to `<out>.log`.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Resumable training state, rewritten every epoch; defaults to `<out>.state`.
    #[arg(long)]
    pub state: Option<PathBuf>,
    /// Continue from a training state written by an earlier run.
    #[arg(long, value_name = "STATE")]
    pub resume: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_enum, default_value_t = Report::Text)]
    pub report: Report,
    /// Output file for the csv and svg reports.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Only evaluate frames after the training split.
    #[arg(long)]
    pub split: Option<f64>,
    /// Also report RMSE after rigid alignment of the prediction.
    #[arg(long)]
    pub align: bool,
    #[arg(long, value_enum, default_value_t = Arch::Desk)]
    pub arch: Arch,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    #[arg(long, value_enum, default_value_t = Precision::Double)]
    pub precision: Precision,
    /// Random instances per operator.
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Weights to load; freshly initialized weights are used otherwise.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Input size as `N` or `HxW`.
    #[arg(long, default_value = "64")]
    pub size: String,
    /// Timed forward passes.
    #[arg(long, default_value_t = 100)]
    pub frames: usize,
    #[arg(long, value_enum, default_value_t = Arch::Desk)]
    pub arch: Arch,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Dataset providing the ground-truth trajectory.
    #[arg(long)]
    pub data: PathBuf,
    /// Weights whose predictions are exported instead of the ground truth.
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    /// Output file.
    #[arg(long)]
    pub traj: PathBuf,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long, value_enum, default_value_t = Arch::Desk)]
    pub arch: Arch,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

/// Why a command did not succeed.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Runtime(capsule_pose::Error),
}

impl From<capsule_pose::Error> for Failure {
    fn from(e: capsule_pose::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// exit code. Output goes to `out`, diagnostics to `err`.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let argv = match merge_config(argv) {
        Ok(a) => a,
        Err(failure) => return report_failure(failure, err),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{}", e.render());
                    EXIT_USAGE
                }
            };
        }
    };
    match commands::dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(failure) => report_failure(failure, err),
    }
}

fn report_failure(failure: Failure, err: &mut dyn Write) -> i32 {
    match failure {
        Failure::Usage(msg) => {
            let _ = writeln!(err, "error: {msg}\n\nFor more information, try '--help'.");
            EXIT_USAGE
        }
        Failure::Runtime(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_RUNTIME
        }
    }
}

/// [`run_with`] on the process streams.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}
