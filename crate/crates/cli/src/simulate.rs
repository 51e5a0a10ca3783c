use std::fs::File;
use std::io::{BufWriter, Write};

use anyhow::{bail, ensure, Context, Result};
use rsvio_core::io::{save_calibration_json, save_imu_csv, save_tracks_json, write_json, TrackFile};
use rsvio_synth::montecarlo::trial_seed;
use rsvio_synth::{generate_scenario, perturb, NoiseSpec};

use crate::args::SimulateArgs;
use crate::dataset::{GroundTruth, CALIB_FILE, GT_FILE, IMU_FILE, TRACKS_FILE};
use crate::scenario::{experiment, single_variant};

/// Writes one window of the scenario at one noise level. The IMU file carries
/// the accelerometer noise and biases; the rotation perturbation lives on the
/// integrated attitudes and has no place in a raw stream, so it is left out.
pub fn run(args: &SimulateArgs) -> Result<()> {
    let exp = experiment(&args.scenario)?;
    let variant = single_variant(&exp)?;
    let cfg = &variant.config;
    if cfg.outlier_ratio > 0.0 {
        bail!("outliers cannot be written as feature tracks; corrupt the tracks file instead");
    }
    let sigma = match args.scenario.sigma.as_slice() {
        [] => 0.0,
        [s] => *s,
        _ => bail!("simulate takes a single --sigma"),
    };
    ensure!(args.window < cfg.windows, "window {} out of range ({} windows)", args.window, cfg.windows);

    let scenario = generate_scenario(&variant.trajectory, cfg)?;
    let w = &scenario.windows[args.window];
    let noise = NoiseSpec {
        rot_noise_deg: 0.0,
        ..NoiseSpec::from_config(cfg, sigma)
    };
    let seed = trial_seed(cfg.seed, 0, args.window);
    let noisy = perturb(&scenario, args.window, &noise, seed)?;

    let mut tracks = vec![Vec::new(); w.tracks.len()];
    for o in noisy.set.observations() {
        tracks[o.track].push(o.obs);
    }

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    save_imu_csv(&noisy.imu, args.out.join(IMU_FILE))?;
    save_tracks_json(
        &TrackFile {
            pairing: cfg.pairing_mode(),
            tracks,
        },
        args.out.join(TRACKS_FILE),
    )?;
    save_calibration_json(&scenario.calib, args.out.join(CALIB_FILE))?;
    let gt = GroundTruth {
        v0: w.v0.into(),
        g0: w.g0.into(),
        window: args.window,
        start_frame: w.start_frame,
        sigma_px: sigma,
        seed,
        accel_bias: cfg.accel_bias,
        gyro_bias: cfg.gyro_bias,
    };
    let mut f = BufWriter::new(File::create(args.out.join(GT_FILE))?);
    write_json(&gt, &mut f)?;
    f.flush()?;

    println!(
        "wrote {} points x {} views ({} frames, sigma {sigma} px) to {}",
        w.tracks.len(),
        w.tracks.first().map_or(0, Vec::len),
        cfg.frames,
        args.out.display()
    );
    Ok(())
}
