//! Noise injection on a noiseless window.

use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use rsvio_core::geometry::{ImuSample, ImuStream, Observation, ScanlineKinematics};
use rsvio_core::so3;
use rsvio_core::system::CorrespondenceSet;

use crate::scenario::{Scenario, ScenarioConfig};
use crate::Result;

/// Noise applied to one trial.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseSpec {
    /// Pixel noise std on both image coordinates.
    pub sigma_px: f64,
    /// Accelerometer white noise std per sample (m/s²).
    pub accel_noise: f64,
    /// Std of the rotation error of each scanline pose (deg).
    pub rot_noise_deg: f64,
    pub outlier_ratio: f64,
    pub accel_bias: Option<Vector3<f64>>,
    pub gyro_bias: Option<Vector3<f64>>,
}

impl NoiseSpec {
    pub fn none() -> Self {
        Self {
            sigma_px: 0.0,
            accel_noise: 0.0,
            rot_noise_deg: 0.0,
            outlier_ratio: 0.0,
            accel_bias: None,
            gyro_bias: None,
        }
    }

    pub fn from_config(cfg: &ScenarioConfig, sigma_px: f64) -> Self {
        Self {
            sigma_px,
            accel_noise: cfg.accel_noise,
            rot_noise_deg: cfg.rot_noise_deg,
            outlier_ratio: cfg.outlier_ratio,
            accel_bias: cfg.accel_bias.map(Vector3::from),
            gyro_bias: cfg.gyro_bias.map(Vector3::from),
        }
    }
}

/// A noisy realization of one window.
#[derive(Clone, Debug)]
pub struct NoisyWindow {
    /// Measured IMU stream: biases and accelerometer noise included.
    pub imu: ImuStream<f64>,
    /// Left-multiplied error of every scanline rotation.
    pub rotation_errors: Vec<Matrix3<f64>>,
    pub set: CorrespondenceSet<f64>,
    /// Per pair: true if one of its observations was replaced by a random pixel.
    pub outlier_pairs: Vec<bool>,
}

impl NoisyWindow {
    /// Scanline kinematics of `stream` with the rotation errors applied. The
    /// stream may differ from `self.imu`, e.g. after bias correction.
    pub fn kinematics(&self, stream: &ImuStream<f64>, line_period: f64, scanlines: usize) -> Result<ScanlineKinematics<f64>> {
        let fine = stream.resample(0.0, line_period, scanlines)?;
        let ideal = ScanlineKinematics::integrate(&fine);
        let rotations = ideal
            .rotations()
            .iter()
            .zip(&self.rotation_errors)
            .map(|(r, e)| e * r)
            .collect();
        let accels: Vec<_> = fine.samples().iter().map(|s| s.accel).collect();
        Ok(ScanlineKinematics::from_rotations(line_period, rotations, &accels)?)
    }
}

/// Perturbs window `w` of `scenario`. The same seed always gives the same
/// realization.
pub fn perturb(scenario: &Scenario, w: usize, noise: &NoiseSpec, trial_seed: u64) -> Result<NoisyWindow> {
    let window = &scenario.windows[w];
    let cfg = &scenario.config;
    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed);

    let accel = Normal::new(0.0, noise.accel_noise).expect("validated non-negative std");
    let ea = noise.accel_bias.unwrap_or_default();
    let ew = noise.gyro_bias.unwrap_or_default();
    let samples = window
        .imu
        .samples()
        .iter()
        .map(|s| {
            let n = if noise.accel_noise > 0.0 {
                Vector3::from_fn(|_, _| accel.sample(&mut rng))
            } else {
                Vector3::zeros()
            };
            ImuSample::new(s.omega + ew, s.accel + ea + n)
        })
        .collect();
    let imu = ImuStream::new(samples, window.imu.dt(), window.imu.t0())?;

    // Scanline 0 is the origin and stays exact.
    let angle = Normal::new(0.0, noise.rot_noise_deg.to_radians()).expect("validated non-negative std");
    let rotation_errors = (0..=window.scanlines)
        .map(|i| {
            if i == 0 || noise.rot_noise_deg == 0.0 {
                Matrix3::identity()
            } else {
                let axis = Vector3::from(UnitSphere.sample(&mut rng));
                so3::exp(&(axis * angle.sample(&mut rng)))
            }
        })
        .collect();

    let mut set = scenario.correspondences(w)?;
    if noise.sigma_px > 0.0 {
        let px = Normal::new(0.0, noise.sigma_px).expect("validated non-negative std");
        for o in set.observations_mut() {
            // The readout row is where the point was exposed; only the
            // measured position is noisy.
            o.obs.u.x += px.sample(&mut rng);
            o.obs.u.y += px.sample(&mut rng);
        }
    }

    let n_pairs = set.pairs().len();
    let mut outlier_pairs = vec![false; n_pairs];
    let n_out = (noise.outlier_ratio * n_pairs as f64).round() as usize;
    if n_out > 0 {
        let mut chosen = sample(&mut rng, n_pairs, n_out).into_vec();
        chosen.sort_unstable();
        for p in chosen {
            let old = set.observations()[set.pairs()[p].b].obs;
            let x = rng.random_range(0.0..cfg.image_width as f64);
            let y = rng.random_range(0.0..cfg.image_height as f64);
            set.detach(p, true, Observation::new(old.cam_id, old.frame, y.floor() as usize, x, y));
            outlier_pairs[p] = true;
        }
    }
    Ok(NoisyWindow {
        imu,
        rotation_errors,
        set,
        outlier_pairs,
    })
}
