//! Command-line surface.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rsvio_core::estimators::Method;
use rsvio_synth::{CameraSetup, Pairing, Preset, ShutterMode};

#[derive(Parser, Debug)]
#[command(name = "rsvio", version, about = "Velocity and gravity initialization for rolling-shutter visual-inertial rigs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// Worker threads for Monte-Carlo trials (default: available parallelism).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic dataset (IMU CSV, tracks, calibration, ground truth).
    Simulate(SimulateArgs),
    /// Estimate velocity and gravity from dataset files.
    Solve(SolveArgs),
    /// Run a Monte-Carlo experiment and write CSV results.
    Benchmark(BenchmarkArgs),
    /// Score estimates against a ground-truth file.
    Compare(CompareArgs),
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairingArg {
    Dense,
    FirstAnchor,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum CameraArg {
    Mono,
    Stereo,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShutterArg {
    Rs,
    GsOnRs,
}

impl From<PairingArg> for Pairing {
    fn from(p: PairingArg) -> Self {
        match p {
            PairingArg::Dense => Pairing::Dense,
            PairingArg::FirstAnchor => Pairing::FirstAnchor,
        }
    }
}

impl From<CameraArg> for CameraSetup {
    fn from(c: CameraArg) -> Self {
        match c {
            CameraArg::Mono => CameraSetup::Mono,
            CameraArg::Stereo => CameraSetup::Stereo,
        }
    }
}

impl From<ShutterArg> for ShutterMode {
    fn from(s: ShutterArg) -> Self {
        match s {
            ShutterArg::Rs => ShutterMode::Rs,
            ShutterArg::GsOnRs => ShutterMode::GsOnRs,
        }
    }
}

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: rsvio_core::Error| e.to_string())
}

fn parse_preset(s: &str) -> Result<Preset, String> {
    s.parse().map_err(|e: rsvio_synth::SynthError| e.to_string())
}

/// Scenario selection shared by `simulate` and `benchmark`.
#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Named experiment.
    #[arg(long, value_parser = parse_preset, default_value = "forward")]
    pub preset: Preset,

    /// Scenario config as JSON instead of a preset.
    #[arg(long, conflicts_with = "preset")]
    pub config: Option<PathBuf>,

    /// Pixel noise levels, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub sigma: Vec<f64>,

    /// Realizations per noise level.
    #[arg(long)]
    pub trials: Option<usize>,

    /// Frames per window.
    #[arg(long)]
    pub frames: Option<usize>,

    #[arg(long, value_enum)]
    pub pairing: Option<PairingArg>,

    #[arg(long, value_enum)]
    pub camera: Option<CameraArg>,

    #[arg(long, value_enum)]
    pub shutter: Option<ShutterArg>,

    /// Estimate a constant accelerometer bias.
    #[arg(long)]
    pub model_accel_bias: bool,

    /// Estimate a constant gyroscope bias.
    #[arg(long)]
    pub model_gyro_bias: bool,

    /// Drop the accelerometer and rotation noise.
    #[arg(long)]
    pub no_imu_noise: bool,

    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,

    /// Sliding window to export.
    #[arg(long, default_value_t = 0)]
    pub window: usize,

    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SolveArgs {
    /// Directory holding imu.csv, tracks.json and calib.json.
    #[arg(long, required_unless_present_all = ["imu", "tracks", "calib"])]
    pub data: Option<PathBuf>,

    #[arg(long)]
    pub imu: Option<PathBuf>,

    #[arg(long)]
    pub tracks: Option<PathBuf>,

    #[arg(long)]
    pub calib: Option<PathBuf>,

    /// Estimators to run, comma separated.
    #[arg(long, value_delimiter = ',', value_parser = parse_method, default_value = "renorm")]
    pub method: Vec<Method>,

    /// Initializer for bundle adjustment.
    #[arg(long, value_parser = parse_method, default_value = "ls")]
    pub ba_init: Method,

    /// Assumed pixel noise, sets the RANSAC inlier threshold.
    #[arg(long, default_value_t = 0.3)]
    pub sigma: f64,

    /// Skip outlier pruning.
    #[arg(long)]
    pub no_ransac: bool,

    #[arg(long, value_enum, default_value = "rs")]
    pub shutter: ShutterArg,

    #[arg(long)]
    pub model_accel_bias: bool,

    #[arg(long)]
    pub model_gyro_bias: bool,

    /// RANSAC seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Output directory for estimate.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,

    /// Also write the bundle-adjustment cost trace as ba_trace.csv.
    #[arg(long)]
    pub trace: bool,
}

#[derive(Args, Debug)]
pub struct BenchmarkArgs {
    #[command(flatten)]
    pub scenario: ScenarioArgs,

    /// Methods to compare, overriding the preset's.
    #[arg(long, value_delimiter = ',', value_parser = parse_method)]
    pub method: Vec<Method>,

    /// Prune outliers with RANSAC before solving.
    #[arg(long)]
    pub ransac: bool,

    /// Fraction of pairs replaced by gross outliers.
    #[arg(long)]
    pub outliers: Option<f64>,

    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Ground truth written by `simulate`.
    #[arg(long)]
    pub gt: PathBuf,

    /// Estimate files written by `solve`.
    #[arg(long, required = true, num_args = 1..)]
    pub estimate: Vec<PathBuf>,

    /// Also write compare.csv to this directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}
