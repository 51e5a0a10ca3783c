#![allow(dead_code)]

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rsvio_core::geometry::{
    CameraCalibration, ImuSample, ImuStream, IntegrationMode, Observation, RigCalibration, ScanlineKinematics, Shutter,
};
use rsvio_core::so3;

pub struct World {
    pub calib: RigCalibration<f64>,
    pub raw: ImuStream<f64>,
    pub kin: ScanlineKinematics<f64>,
    pub v0: Vector3<f64>,
    pub g0: Vector3<f64>,
    pub points: Vec<Vector3<f64>>,
    pub tracks: Vec<Vec<Observation<f64>>>,
}

pub fn rig() -> RigCalibration<f64> {
    let k = Matrix3::new(460.0, 0.0, 320.0, 0.0, 460.0, 240.0, 0.0, 0.0, 1.0);
    let cam = |x: f64| CameraCalibration::new(k, Matrix3::identity(), Vector3::new(x, 0.0, 0.0)).unwrap();
    RigCalibration::new(vec![cam(-0.07), cam(0.07)], 1.0 / 4_800.0, 480, 10.0).unwrap()
}

fn project(w: &World, x: &Vector3<f64>, cam: usize, frame: usize) -> Option<Observation<f64>> {
    let clock = w.calib.clock(Shutter::Rolling);
    let c = &w.calib.cameras[cam];
    let mut row = 240usize;
    for _ in 0..20 {
        let pose = w.kin.pose(clock.index(frame, row), &w.v0, &w.g0).ok()?;
        let xc = (pose.rotation * c.r_cam_imu).transpose() * (x - pose.translation - pose.rotation * c.t_cam_imu);
        if xc.z <= 0.1 {
            return None;
        }
        let u = c.k * (xc / xc.z);
        if !(0.0..640.0).contains(&u.x) || !(0.0..480.0).contains(&u.y) {
            return None;
        }
        let new_row = u.y.floor() as usize;
        if new_row == row {
            return Some(Observation::new(cam, frame, row, u.x, u.y));
        }
        row = new_row;
    }
    None
}

/// A stereo rig under smooth random motion, with points seen by both cameras
/// in every frame.
pub fn world(seed: u64, frames: usize, n_points: usize) -> World {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calib = rig();
    let count = calib.clock(Shutter::Rolling).last_index_of_frame(frames - 1) + 1;
    let dt = 1.0 / 800.0;
    let n = ((count as f64 / 4_800.0) / dt).ceil() as usize + 2;
    let w0 = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
    let phase: f64 = rng.random_range(0.0..6.0);
    let samples = (0..n)
        .map(|k| {
            let t = k as f64 * dt;
            ImuSample::new(
                w0 + Vector3::new((3.0 * t + phase).sin(), (2.0 * t).cos(), 0.5 * t) * 0.3,
                Vector3::new(0.3 * (5.0 * t).sin(), -9.8 + 0.2 * t, 0.5 * (4.0 * t + phase).cos()),
            )
        })
        .collect();
    let raw = ImuStream::new(samples, dt, 0.0).unwrap();
    let kin = ScanlineKinematics::from_raw(&raw, calib.readout_per_line, count, IntegrationMode::InterpolateThenIntegrate).unwrap();
    let v0 = Vector3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(0.3..1.0));
    let g0 = so3::exp(&Vector3::new(rng.random_range(-0.2..0.2), 0.0, rng.random_range(-0.2..0.2))) * Vector3::new(0.0, 9.81, 0.0);
    let mut w = World {
        calib,
        raw,
        kin,
        v0,
        g0,
        points: Vec::new(),
        tracks: Vec::new(),
    };
    while w.points.len() < n_points {
        let u = Vector3::new(rng.random_range(40.0..600.0), rng.random_range(40.0..440.0), 1.0);
        let x = w.calib.cameras[0].t_cam_imu + w.calib.cameras[0].k_inv() * u * rng.random_range(2.0..10.0);
        let track: Option<Vec<_>> = (0..frames)
            .flat_map(|f| [(0, f), (1, f)])
            .map(|(c, f)| project(&w, &x, c, f))
            .collect();
        if let Some(track) = track {
            w.points.push(x);
            w.tracks.push(track);
        }
    }
    w
}
