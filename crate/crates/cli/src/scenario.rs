//! Experiment assembly from presets, config files and flag overrides.

use anyhow::{ensure, Context, Result};
use rsvio_core::estimators::Method;
use rsvio_synth::{Experiment, Preset, ScenarioConfig, TrajectorySpec, Variant};

use crate::args::ScenarioArgs;

pub fn experiment(args: &ScenarioArgs) -> Result<Experiment> {
    let base = match &args.config {
        Some(path) => {
            let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
            let config: ScenarioConfig = rsvio_core::io::read_json(std::io::BufReader::new(file))
                .with_context(|| format!("reading {}", path.display()))?;
            Experiment {
                preset: Preset::Forward,
                methods: vec![Method::Ls, Method::Renorm],
                variants: vec![Variant {
                    label: String::new(),
                    trajectory: TrajectorySpec::forward(),
                    config,
                }],
            }
        }
        None => args.preset.experiment(),
    };
    let exp = base.map_configs(|c| apply(args, c));
    for v in &exp.variants {
        v.config.validate()?;
    }
    Ok(exp)
}

fn apply(args: &ScenarioArgs, c: &mut ScenarioConfig) {
    if !args.sigma.is_empty() {
        c.sigma_px = args.sigma.clone();
    }
    if let Some(t) = args.trials {
        c.n_trials = t;
    }
    if let Some(f) = args.frames {
        c.frames = f;
    }
    if let Some(p) = args.pairing {
        c.pairing = p.into();
    }
    if let Some(cam) = args.camera {
        c.camera = cam.into();
    }
    if let Some(s) = args.shutter {
        c.shutter = s.into();
    }
    c.model_accel_bias |= args.model_accel_bias;
    c.model_gyro_bias |= args.model_gyro_bias;
    if args.no_imu_noise {
        c.accel_noise = 0.0;
        c.rot_noise_deg = 0.0;
    }
    if let Some(s) = args.seed {
        c.seed = s;
    }
}

/// The single arm a dataset is exported from.
pub fn single_variant(exp: &Experiment) -> Result<&Variant> {
    ensure!(!exp.variants.is_empty(), "experiment has no scenario");
    if exp.variants.len() > 1 {
        log::warn!(
            "preset {} has {} arms; using '{}'",
            exp.preset,
            exp.variants.len(),
            exp.variants[0].label
        );
    }
    Ok(&exp.variants[0])
}
