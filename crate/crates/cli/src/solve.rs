use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use rsvio_core::bias::{BiasConfig, GyroBiasKinematics};
use rsvio_core::geometry::{IntegrationMode, ScanlineKinematics, SceneGeometry, Shutter};
use rsvio_core::io::{load_calibration_json, load_imu_csv, load_tracks_json, write_json, EstimateJson};
use rsvio_core::system::{make_pairing, CorrespondenceSet, PairingMode};
use rsvio_synth::ransac::MINIMAL_PAIRS;
use rsvio_synth::{ransac_prune, solve, MethodResult, RansacOptions, ShutterMode, SolveOptions};

use crate::args::SolveArgs;
use crate::dataset::{CALIB_FILE, ESTIMATE_FILE, IMU_FILE, TRACKS_FILE};

pub enum Outcome {
    Converged,
    Diverged,
}

fn input(explicit: &Option<PathBuf>, dir: &Option<PathBuf>, name: &str) -> Result<PathBuf> {
    explicit
        .clone()
        .or_else(|| dir.as_ref().map(|d| d.join(name)))
        .ok_or_else(|| anyhow!("no path for {name}"))
}

fn frames_of(pairing: PairingMode, tracks: &[Vec<rsvio_core::geometry::Observation<f64>>]) -> usize {
    let seen = tracks.iter().flatten().map(|o| o.frame + 1).max().unwrap_or(0);
    seen.max(pairing.min_frames())
}

pub fn run(args: &SolveArgs) -> Result<Outcome> {
    let imu_path = input(&args.imu, &args.data, IMU_FILE)?;
    let tracks_path = input(&args.tracks, &args.data, TRACKS_FILE)?;
    let calib_path = input(&args.calib, &args.data, CALIB_FILE)?;
    let raw = load_imu_csv::<f64>(&imu_path).with_context(|| format!("reading {}", imu_path.display()))?;
    let tracks = load_tracks_json::<f64>(&tracks_path).with_context(|| format!("reading {}", tracks_path.display()))?;
    let calib = load_calibration_json::<f64>(&calib_path).with_context(|| format!("reading {}", calib_path.display()))?;

    let frames = frames_of(tracks.pairing, &tracks.tracks);
    let pairing = make_pairing(frames, tracks.pairing)?;
    let set = CorrespondenceSet::from_tracks(&tracks.tracks, &pairing)?;
    if set.pairs().len() < MINIMAL_PAIRS {
        return Err(rsvio_core::Error::InsufficientCorrespondences {
            pairs: set.pairs().len(),
            constraints: set.pairs().len() as isize,
            needed: MINIMAL_PAIRS,
        }
        .into());
    }

    let shutter: Shutter = ShutterMode::from(args.shutter).solver_shutter();
    let scanlines = calib.clock(Shutter::Rolling).last_index_of_frame(frames - 1) + 1;
    let kin = ScanlineKinematics::from_raw(&raw, calib.readout_per_line, scanlines, IntegrationMode::InterpolateThenIntegrate)?;
    let gyro = if args.model_gyro_bias {
        Some(GyroBiasKinematics::from_raw(&raw, calib.readout_per_line, scanlines)?)
    } else {
        None
    };

    let set = if args.no_ransac {
        set
    } else {
        let geom = SceneGeometry::new(&calib, &kin, shutter);
        let opts = RansacOptions {
            sigma_assumed: args.sigma,
            seed: args.seed,
            ..RansacOptions::default()
        };
        let out = ransac_prune(&set, &geom, &opts)?;
        log::info!("RANSAC kept {} of {} pairs", out.inliers.len(), set.pairs().len());
        out.set
    };

    let opts = SolveOptions {
        methods: args.method.clone(),
        shutter,
        bias: BiasConfig {
            model_accel: args.model_accel_bias,
            model_gyro: args.model_gyro_bias,
            ..BiasConfig::off()
        },
        ba_init: args.ba_init,
        ..SolveOptions::default()
    };
    let results = solve(&set, &calib, &kin, gyro.as_ref(), &opts)?;

    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    if args.trace {
        if let Some(ba) = results.iter().find_map(|r| r.ba.as_ref()) {
            write_trace(&args.out.join("ba_trace.csv"), ba)?;
        } else {
            log::warn!("--trace has no effect without the ba method");
        }
    }

    let mut docs = Vec::with_capacity(results.len());
    for MethodResult { method, estimate, .. } in results {
        let est = estimate.map_err(|e| anyhow!("{method} failed: {e}"))?;
        println!(
            "{:<14} v0 = [{:+.4}, {:+.4}, {:+.4}] m/s  g0 = [{:+.4}, {:+.4}, {:+.4}] m/s²  iterations {}{}",
            method.to_string(),
            est.v0.x,
            est.v0.y,
            est.v0.z,
            est.g0.x,
            est.g0.y,
            est.g0.z,
            est.iterations,
            if est.converged { "" } else { "  (not converged)" }
        );
        docs.push(EstimateJson::from_estimate(&est));
    }
    let path = args.out.join(ESTIMATE_FILE);
    let mut f = BufWriter::new(File::create(&path).with_context(|| format!("creating {}", path.display()))?);
    if let [single] = docs.as_slice() {
        write_json(single, &mut f)?;
    } else {
        write_json(&docs, &mut f)?;
    }
    f.flush()?;

    Ok(if docs.iter().all(|d| d.converged) {
        Outcome::Converged
    } else {
        Outcome::Diverged
    })
}

fn write_trace(path: &Path, ba: &rsvio_core::ba::BaOutcome<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iteration", "cost", "damping", "accepted"])?;
    w.write_record(["0", &format!("{:e}", ba.initial_cost), "", "true"])?;
    for it in &ba.trace {
        w.write_record([
            it.iteration.to_string(),
            format!("{:e}", it.cost),
            format!("{:e}", it.damping),
            it.accepted.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
