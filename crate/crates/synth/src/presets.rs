//! Named experiment configurations.

use std::fmt;
use std::str::FromStr;

use rsvio_core::estimators::Method;
use serde::{Deserialize, Serialize};

use crate::scenario::{CameraSetup, Pairing, ScenarioConfig, ShutterMode};
use crate::trajectory::TrajectorySpec;
use crate::SynthError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Forward walk with default noise, 50 points, 5 stereo frames.
    Forward,
    /// LS, renormalization and bundle adjustment over the noise grid.
    PaperFig3,
    /// The four linear estimators over the noise grid.
    PaperFig4,
    /// Rolling-shutter data solved with the rolling and the global model.
    PaperFig5,
    /// Stereo against mono.
    PaperFig6,
    /// First-anchor pairing against dense pairing.
    PaperFig7,
}

impl Preset {
    pub const ALL: [Preset; 6] = [
        Preset::Forward,
        Preset::PaperFig3,
        Preset::PaperFig4,
        Preset::PaperFig5,
        Preset::PaperFig6,
        Preset::PaperFig7,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Forward => "forward",
            Preset::PaperFig3 => "paper-fig3",
            Preset::PaperFig4 => "paper-fig4",
            Preset::PaperFig5 => "paper-fig5",
            Preset::PaperFig6 => "paper-fig6",
            Preset::PaperFig7 => "paper-fig7",
        }
    }

    /// Short id used for plot-data file names.
    pub fn figure_id(self) -> &'static str {
        match self {
            Preset::Forward => "forward",
            Preset::PaperFig3 => "fig3",
            Preset::PaperFig4 => "fig4",
            Preset::PaperFig5 => "fig5",
            Preset::PaperFig6 => "fig6",
            Preset::PaperFig7 => "fig7",
        }
    }

    pub fn experiment(self) -> Experiment {
        let base = ScenarioConfig::default();
        let traj = TrajectorySpec::forward();
        let one = |methods: Vec<Method>| Experiment {
            preset: self,
            methods,
            variants: vec![Variant {
                label: String::new(),
                trajectory: traj.clone(),
                config: base.clone(),
            }],
        };
        let two = |methods: Vec<Method>, a: (&str, ScenarioConfig), b: (&str, ScenarioConfig)| Experiment {
            preset: self,
            methods,
            variants: [a, b]
                .into_iter()
                .map(|(label, config)| Variant {
                    label: label.into(),
                    trajectory: traj.clone(),
                    config,
                })
                .collect(),
        };
        match self {
            Preset::Forward => one(vec![Method::Ls, Method::Renorm]),
            Preset::PaperFig3 => one(vec![Method::Ls, Method::Renorm, Method::Ba]),
            Preset::PaperFig4 => one(vec![Method::Ls, Method::IterReweight, Method::Taubin, Method::Renorm]),
            Preset::PaperFig5 => two(
                vec![Method::Ls, Method::Renorm],
                ("rs", base.clone()),
                (
                    "gs-on-rs",
                    ScenarioConfig {
                        shutter: ShutterMode::GsOnRs,
                        ..base.clone()
                    },
                ),
            ),
            Preset::PaperFig6 => two(
                vec![Method::Ls, Method::Renorm],
                ("stereo", base.clone()),
                (
                    "mono",
                    ScenarioConfig {
                        camera: CameraSetup::Mono,
                        ..base.clone()
                    },
                ),
            ),
            Preset::PaperFig7 => two(
                vec![Method::Ls, Method::Renorm],
                ("dense", base.clone()),
                (
                    "first-anchor",
                    ScenarioConfig {
                        pairing: Pairing::FirstAnchor,
                        ..base.clone()
                    },
                ),
            ),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, SynthError> {
        Preset::ALL
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| SynthError::Config(format!("unknown preset '{s}'")))
    }
}

/// One arm of an experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    /// Empty for single-arm experiments.
    pub label: String,
    pub trajectory: TrajectorySpec,
    pub config: ScenarioConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Experiment {
    pub preset: Preset,
    pub methods: Vec<Method>,
    pub variants: Vec<Variant>,
}

impl Experiment {
    /// Applies `f` to the config of every arm, e.g. to override the trial count.
    pub fn map_configs(mut self, mut f: impl FnMut(&mut ScenarioConfig)) -> Self {
        for v in &mut self.variants {
            f(&mut v.config);
        }
        self
    }
}
