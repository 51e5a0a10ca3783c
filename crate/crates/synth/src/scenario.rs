//! Ground-truth scenarios: a trajectory, a rig, and per-window feature tracks
//! projected through the exact scanline poses.

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rsvio_core::geometry::{
    CameraCalibration, ImuStream, IntegrationMode, Observation, RigCalibration, ScanlineClock, ScanlineKinematics,
    SceneGeometry, Shutter,
};
use rsvio_core::system::{make_pairing, CorrespondenceSet, PairingMode, ViewPair};
use serde::{Deserialize, Serialize};

use crate::trajectory::{Trajectory, TrajectorySpec};
use crate::{Result, SynthError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Every earlier left view with every later right view.
    #[default]
    Dense,
    /// The first left view with every later view.
    FirstAnchor,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CameraSetup {
    Mono,
    #[default]
    Stereo,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShutterMode {
    /// Rolling-shutter data solved with the rolling-shutter model.
    #[default]
    Rs,
    /// Rolling-shutter data solved as if each frame had one pose.
    GsOnRs,
}

impl ShutterMode {
    /// Model used by the solver.
    pub fn solver_shutter(self) -> Shutter {
        match self {
            ShutterMode::Rs => Shutter::Rolling,
            ShutterMode::GsOnRs => Shutter::GlobalMidRow,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    /// Pixel noise levels to sweep.
    pub sigma_px: Vec<f64>,
    /// Accelerometer white noise per sample (m/s²).
    pub accel_noise: f64,
    /// Rotation perturbation per scanline pose (deg).
    pub rot_noise_deg: f64,
    pub n_points: usize,
    /// Depth range of the points in the first left view (m).
    pub depth_range: [f64; 2],
    pub n_trials: usize,
    pub frames: usize,
    pub pairing: Pairing,
    pub shutter: ShutterMode,
    pub camera: CameraSetup,
    /// Stereo baseline (m).
    pub baseline: f64,
    pub seed: u64,
    /// Number of sliding windows along the trajectory.
    pub windows: usize,
    /// Frame at which the first window starts.
    pub first_frame: usize,
    /// Frames between consecutive windows.
    pub window_stride: usize,
    pub imu_rate: f64,
    pub fps: f64,
    pub readout_per_line: f64,
    pub image_width: usize,
    pub image_height: usize,
    pub focal: f64,
    /// Constant sensor biases added to the measured IMU stream.
    pub accel_bias: Option<[f64; 3]>,
    pub gyro_bias: Option<[f64; 3]>,
    pub model_accel_bias: bool,
    pub model_gyro_bias: bool,
    /// Fraction of pairs whose second observation is replaced by a random pixel.
    pub outlier_ratio: f64,
    /// Prune with RANSAC before solving.
    pub ransac: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            sigma_px: vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5],
            accel_noise: 0.005,
            rot_noise_deg: 0.02,
            n_points: 50,
            depth_range: [1.0, 15.0],
            n_trials: 100,
            frames: 5,
            pairing: Pairing::Dense,
            shutter: ShutterMode::Rs,
            camera: CameraSetup::Stereo,
            baseline: 0.14,
            seed: 1,
            windows: 22,
            first_frame: 10,
            window_stride: 1,
            imu_rate: 800.0,
            fps: 10.0,
            readout_per_line: 1.0 / 47_600.0,
            image_width: 640,
            image_height: 480,
            focal: 450.0,
            accel_bias: None,
            gyro_bias: None,
            model_accel_bias: false,
            model_gyro_bias: false,
            outlier_ratio: 0.0,
            ransac: false,
        }
    }
}

impl ScenarioConfig {
    pub fn pairing_mode(&self) -> PairingMode {
        match (self.camera, self.pairing) {
            (CameraSetup::Stereo, Pairing::Dense) => PairingMode::StereoDense,
            (CameraSetup::Stereo, Pairing::FirstAnchor) => PairingMode::StereoFirstAnchor,
            (CameraSetup::Mono, Pairing::Dense) => PairingMode::Mono,
            (CameraSetup::Mono, Pairing::FirstAnchor) => PairingMode::MonoFirstAnchor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SynthError::Config(m.into()));
        if self.sigma_px.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return bad("pixel noise levels must be finite and non-negative");
        }
        if !(self.accel_noise >= 0.0 && self.rot_noise_deg >= 0.0) {
            return bad("IMU noise levels must be non-negative");
        }
        let [near, far] = self.depth_range;
        if !(near > 0.0 && far >= near && far.is_finite()) {
            return bad("depth range must be positive and ordered");
        }
        if self.n_points == 0 || self.windows == 0 {
            return bad("need at least one point and one window");
        }
        if self.frames < self.pairing_mode().min_frames() {
            return bad(&format!(
                "pairing {} needs at least {} frames",
                self.pairing_mode(),
                self.pairing_mode().min_frames()
            ));
        }
        if !(self.baseline > 0.0) && self.camera == CameraSetup::Stereo {
            return bad("stereo baseline must be positive");
        }
        if !(self.imu_rate > 0.0 && self.fps > 0.0 && self.focal > 0.0) {
            return bad("rates and focal length must be positive");
        }
        if self.image_width == 0 || self.image_height == 0 {
            return bad("image size must be positive");
        }
        if !(0.0..1.0).contains(&self.outlier_ratio) {
            return bad("outlier ratio must lie in [0, 1)");
        }
        let finite = |b: &Option<[f64; 3]>| b.is_none_or(|v| v.iter().all(|x| x.is_finite()));
        if !finite(&self.accel_bias) || !finite(&self.gyro_bias) {
            return bad("biases must be finite");
        }
        Ok(())
    }

    /// The simulated rig: identical pinhole cameras looking along the IMU `z`
    /// axis, offset symmetrically along `x` for stereo.
    pub fn rig(&self) -> Result<RigCalibration<f64>> {
        let k = Matrix3::new(
            self.focal,
            0.0,
            self.image_width as f64 / 2.0,
            0.0,
            self.focal,
            self.image_height as f64 / 2.0,
            0.0,
            0.0,
            1.0,
        );
        let cam = |x: f64| CameraCalibration::new(k, Matrix3::identity(), Vector3::new(x, 0.0, 0.0));
        let cameras = match self.camera {
            CameraSetup::Mono => vec![cam(0.0)?],
            CameraSetup::Stereo => vec![cam(-self.baseline / 2.0)?, cam(self.baseline / 2.0)?],
        };
        Ok(RigCalibration::new(cameras, self.readout_per_line, self.image_height, self.fps)?)
    }
}

/// Ground truth of one sliding window. The origin is the first scanline of
/// its first frame.
#[derive(Clone, Debug)]
pub struct WindowData {
    pub start_frame: usize,
    /// Ideal IMU stream starting at the window origin.
    pub imu: ImuStream<f64>,
    /// Scanline kinematics integrated from `imu`.
    pub kinematics: ScanlineKinematics<f64>,
    /// Number of scanlines spanned by the window.
    pub scanlines: usize,
    pub v0: Vector3<f64>,
    pub g0: Vector3<f64>,
    /// Points in the origin frame.
    pub points: Vec<Vector3<f64>>,
    /// Noiseless observations of every point in the paired views.
    pub tracks: Vec<Vec<Observation<f64>>>,
}

impl WindowData {
    pub fn geometry<'a>(&'a self, calib: &'a RigCalibration<f64>, shutter: Shutter) -> SceneGeometry<'a, f64> {
        SceneGeometry::new(calib, &self.kinematics, shutter)
    }
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub trajectory: TrajectorySpec,
    pub calib: RigCalibration<f64>,
    pub windows: Vec<WindowData>,
}

impl Scenario {
    pub fn pairing(&self) -> Vec<ViewPair> {
        make_pairing(self.config.frames, self.config.pairing_mode()).expect("frame count validated with the config")
    }

    /// Noiseless correspondences of window `w`.
    pub fn correspondences(&self, w: usize) -> Result<CorrespondenceSet<f64>> {
        Ok(CorrespondenceSet::from_tracks(&self.windows[w].tracks, &self.pairing())?)
    }
}

/// Row-consistent projection of `x` into `cam` at `frame`: the row the point
/// lands on must be the row whose pose was used.
pub(crate) fn project(
    calib: &RigCalibration<f64>,
    clock: &ScanlineClock<f64>,
    kin: &ScanlineKinematics<f64>,
    v0: &Vector3<f64>,
    g0: &Vector3<f64>,
    width: usize,
    x: &Vector3<f64>,
    cam: usize,
    frame: usize,
) -> Option<Observation<f64>> {
    let c = &calib.cameras[cam];
    let height = calib.image_height;
    let mut row = height / 2;
    let mut seen = Vec::with_capacity(8);
    for _ in 0..30 {
        let pose = kin.pose(clock.index(frame, row), v0, g0).ok()?;
        let xc = (pose.rotation * c.r_cam_imu).transpose() * (x - pose.translation - pose.rotation * c.t_cam_imu);
        if xc.z <= 0.05 {
            return None;
        }
        let u = c.k * (xc / xc.z);
        if !(0.0..width as f64).contains(&u.x) || !(0.0..height as f64).contains(&u.y) {
            return None;
        }
        let new_row = u.y.floor() as usize;
        if new_row == row {
            return Some(Observation::new(cam, frame, row, u.x, u.y));
        }
        // A point on a row boundary can bounce between two rows forever.
        if seen.contains(&new_row) {
            return None;
        }
        seen.push(row);
        row = new_row;
    }
    None
}

fn window_seed(seed: u64, w: usize) -> u64 {
    let mut z = seed ^ (w as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z ^ (z >> 31)
}

fn generate_window(
    traj: &Trajectory,
    cfg: &ScenarioConfig,
    calib: &RigCalibration<f64>,
    pairing: &[ViewPair],
    w: usize,
) -> Result<WindowData> {
    let start_frame = cfg.first_frame + w * cfg.window_stride;
    let t_start = start_frame as f64 / cfg.fps;
    let clock = calib.clock(Shutter::Rolling);
    let scanlines = clock.last_index_of_frame(cfg.frames - 1) + 1;
    let span = (scanlines + 1) as f64 * cfg.readout_per_line;
    if t_start + span > traj.duration() {
        return Err(SynthError::Config(format!(
            "window {w} ends at {:.2} s, after the {:.2} s trajectory",
            t_start + span,
            traj.duration()
        )));
    }
    let imu = traj.sample_imu(cfg.imu_rate, t_start, span)?;
    let kinematics =
        ScanlineKinematics::from_raw(&imu, cfg.readout_per_line, scanlines, IntegrationMode::InterpolateThenIntegrate)?;
    let state = traj.state(t_start);
    let v0 = state.body_velocity();
    let g0 = state.body_gravity();

    let mut views: Vec<(usize, usize)> = pairing
        .iter()
        .flat_map(|(a, b)| [(a.frame, a.cam), (b.frame, b.cam)])
        .collect();
    views.sort_unstable();
    views.dedup();

    let mut rng = ChaCha8Rng::seed_from_u64(window_seed(cfg.seed, w));
    let cam0 = &calib.cameras[0];
    let margin = 2.0;
    let max_attempts = 2000 * cfg.n_points;
    let mut points = Vec::with_capacity(cfg.n_points);
    let mut tracks = Vec::with_capacity(cfg.n_points);
    let mut attempts = 0;
    while points.len() < cfg.n_points {
        attempts += 1;
        if attempts > max_attempts {
            return Err(SynthError::Generation(format!(
                "window {w}: only {} of {} points stay visible in every paired view",
                points.len(),
                cfg.n_points
            )));
        }
        let u = Vector3::new(
            rng.random_range(margin..cfg.image_width as f64 - margin),
            rng.random_range(margin..cfg.image_height as f64 - margin),
            1.0,
        );
        let depth = rng.random_range(cfg.depth_range[0]..=cfg.depth_range[1]);
        let pose = kinematics.pose(clock.index(0, u.y.floor() as usize), &v0, &g0)?;
        let xc = cam0.k_inv() * u * depth;
        let x = pose.translation + pose.rotation * (cam0.r_cam_imu * xc + cam0.t_cam_imu);
        let track: Option<Vec<_>> = views
            .iter()
            .map(|&(frame, cam)| project(calib, &clock, &kinematics, &v0, &g0, cfg.image_width, &x, cam, frame))
            .collect();
        if let Some(track) = track {
            points.push(x);
            tracks.push(track);
        }
    }
    log::debug!("window {w}: {} points after {attempts} draws", points.len());
    Ok(WindowData {
        start_frame,
        imu,
        kinematics,
        scanlines,
        v0,
        g0,
        points,
        tracks,
    })
}

/// Builds every sliding window of the scenario.
pub fn generate_scenario(traj: &TrajectorySpec, cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let trajectory = Trajectory::new(traj)?;
    let calib = cfg.rig()?;
    let pairing = make_pairing(cfg.frames, cfg.pairing_mode())?;
    let windows = (0..cfg.windows)
        .into_par_iter()
        .map(|w| generate_window(&trajectory, cfg, &calib, &pairing, w))
        .collect::<Result<Vec<_>>>()?;
    Ok(Scenario {
        config: cfg.clone(),
        trajectory: traj.clone(),
        calib,
        windows,
    })
}
