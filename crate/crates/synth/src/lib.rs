//! Synthetic rolling-shutter stereo scenarios, noise injection, RANSAC
//! pruning and the Monte-Carlo harness used to compare the initializers.

pub mod metrics;
pub mod montecarlo;
pub mod perturb;
pub mod pipeline;
pub mod presets;
pub mod ransac;
pub mod report;
pub mod scenario;
pub mod trajectory;

pub use metrics::error_metrics;
pub use montecarlo::{run_monte_carlo, simulate_and_run, Aggregate, MonteCarloOptions, MonteCarloReport, TrialResult};
pub use perturb::{perturb, NoiseSpec, NoisyWindow};
pub use pipeline::{solve, MethodResult, SolveOptions};
pub use presets::{Experiment, Preset, Variant};
pub use ransac::{pair_residuals, ransac_prune, PairResidual, RansacOptions, RansacOutcome};
pub use scenario::{generate_scenario, CameraSetup, Pairing, Scenario, ScenarioConfig, ShutterMode, WindowData};
pub use trajectory::{Trajectory, TrajectoryKind, TrajectorySpec};

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("scenario generation failed: {0}")]
    Generation(String),

    #[error("RANSAC found no model with at least {needed} inliers (best {found})")]
    NoConsensus { found: usize, needed: usize },

    #[error(transparent)]
    Core(#[from] rsvio_core::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = SynthError> = std::result::Result<T, E>;
