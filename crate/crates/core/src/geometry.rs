//! IMU integration at scanline rate, rolling-shutter scanline poses and
//! calibrated viewing rays.
//!
//! The origin is the IMU pose at the first scanline of frame 0: `R_0 = I`,
//! `t_0 = 0`. Scanline `i` sits at time `i * readout_per_line` after the
//! origin, rows are read top to bottom, and the IMU samples drive a
//! zero-order-hold integrator:
//!
//! ```text
//! R_i = Π_{k<i} Exp(ω_k Δτ)
//! t_i = i Δτ v0 + (Σ_{k<i} (2i - 2k - 1) R_k a_k + i² g0) Δτ² / 2
//! ```

use nalgebra::{Matrix2, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::scalar::{from_usize, lit, ray_epsilon, to_f64, Scalar};
use crate::so3;

/// Rotation products are projected back onto SO(3) after this many compositions.
pub const REORTHONORMALIZE_EVERY: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSample<T: Scalar> {
    /// Angular velocity in the IMU frame (rad/s).
    pub omega: Vector3<T>,
    /// Specific force in the IMU frame (m/s²).
    pub accel: Vector3<T>,
}

impl<T: Scalar> ImuSample<T> {
    pub fn new(omega: Vector3<T>, accel: Vector3<T>) -> Self {
        Self { omega, accel }
    }

    fn lerp(&self, other: &Self, s: T) -> Self {
        Self {
            omega: self.omega + (other.omega - self.omega) * s,
            accel: self.accel + (other.accel - self.accel) * s,
        }
    }
}

/// Sanity caps applied to every IMU sample.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhysicalLimits {
    pub max_omega: f64,
    pub max_accel: f64,
}

impl Default for PhysicalLimits {
    fn default() -> Self {
        Self {
            max_omega: 50.0,
            max_accel: 200.0,
        }
    }
}

/// Uniformly sampled gyroscope and accelerometer readings.
#[derive(Clone, Debug, PartialEq)]
pub struct ImuStream<T: Scalar> {
    samples: Vec<ImuSample<T>>,
    dt: T,
    t0: T,
}

impl<T: Scalar> ImuStream<T> {
    pub fn new(samples: Vec<ImuSample<T>>, dt: T, t0: T) -> Result<Self> {
        Self::with_limits(samples, dt, t0, PhysicalLimits::default())
    }

    pub fn with_limits(
        samples: Vec<ImuSample<T>>,
        dt: T,
        t0: T,
        limits: PhysicalLimits,
    ) -> Result<Self> {
        if !(dt > T::zero()) {
            return Err(Error::invalid("IMU sample period must be positive"));
        }
        if samples.is_empty() {
            return Err(Error::invalid("IMU stream is empty"));
        }
        if !t0.is_finite() {
            return Err(Error::invalid("IMU start time is not finite"));
        }
        for (k, s) in samples.iter().enumerate() {
            let finite = s.omega.iter().chain(s.accel.iter()).all(|x| x.is_finite());
            if !finite {
                return Err(Error::invalid(format!("IMU sample {k} is not finite")));
            }
            if to_f64(s.omega.norm()) >= limits.max_omega {
                return Err(Error::invalid(format!(
                    "IMU sample {k}: |ω| exceeds {} rad/s",
                    limits.max_omega
                )));
            }
            if to_f64(s.accel.norm()) >= limits.max_accel {
                return Err(Error::invalid(format!(
                    "IMU sample {k}: |a| exceeds {} m/s²",
                    limits.max_accel
                )));
            }
        }
        Ok(Self { samples, dt, t0 })
    }

    pub fn samples(&self) -> &[ImuSample<T>] {
        &self.samples
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn t0(&self) -> T {
        self.t0
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, k: usize) -> T {
        self.t0 + self.dt * from_usize(k)
    }

    pub fn end_time(&self) -> T {
        self.time(self.samples.len() - 1)
    }

    /// Linear interpolation of the signals at time `t`, `None` outside coverage.
    pub fn interpolate(&self, t: T) -> Option<ImuSample<T>> {
        let slack = self.dt * lit(1e-9);
        if t < self.t0 - slack || t > self.end_time() + slack {
            return None;
        }
        let x = ((t - self.t0) / self.dt).max(T::zero());
        let k = to_f64(x.floor()) as usize;
        let last = self.samples.len() - 1;
        if k >= last {
            return Some(self.samples[last]);
        }
        let s = x - from_usize(k);
        Some(self.samples[k].lerp(&self.samples[k + 1], s))
    }

    /// `count` samples at `start + m * dt` by linear interpolation.
    pub fn resample(&self, start: T, dt: T, count: usize) -> Result<ImuStream<T>> {
        let mut samples = Vec::with_capacity(count);
        for m in 0..count {
            let t = start + dt * from_usize(m);
            let s = self.interpolate(t).ok_or(Error::OutsideCoverage {
                index: m,
                available: samples.len(),
            })?;
            samples.push(s);
        }
        if samples.is_empty() {
            return Err(Error::invalid("resampling produced no samples"));
        }
        Ok(ImuStream {
            samples,
            dt,
            t0: start,
        })
    }
}

/// Resamples a stream to a finer period by linear interpolation of ω and a.
///
/// The first sample is preserved; the last one is preserved whenever the
/// stream duration is a multiple of `target_dt`.
pub fn upsample_imu<T: Scalar>(stream: &ImuStream<T>, target_dt: T) -> Result<ImuStream<T>> {
    if !(target_dt > T::zero()) {
        return Err(Error::invalid("target period must be positive"));
    }
    if target_dt > stream.dt * lit(1.0 + 1e-12) {
        return Err(Error::invalid(
            "target period exceeds the stream period (only upsampling is supported)",
        ));
    }
    let duration = stream.end_time() - stream.t0;
    let steps = to_f64(duration / target_dt * lit(1.0 + 1e-12)).floor() as usize;
    stream.resample(stream.t0, target_dt, steps + 1)
}

/// `R_i^0` as the ordered product of `Exp(ω_k Δτ)`, `k = 0..i-1`.
pub fn integrate_rotation<T: Scalar>(stream: &ImuStream<T>, i: usize) -> Result<Matrix3<T>> {
    if i > stream.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            limit: stream.len(),
        });
    }
    let mut r = Matrix3::identity();
    for (k, s) in stream.samples[..i].iter().enumerate() {
        r *= so3::exp(&(s.omega * stream.dt));
        if (k + 1) % REORTHONORMALIZE_EVERY == 0 {
            r = so3::orthonormalize(&r);
        }
    }
    Ok(r)
}

/// Direct evaluation of the discrete translation formula with `t_0 = 0`.
///
/// `rotations[k]` must hold `R_k^0` for every `k < i`.
pub fn integrate_translation<T: Scalar>(
    stream: &ImuStream<T>,
    rotations: &[Matrix3<T>],
    v0: &Vector3<T>,
    g0: &Vector3<T>,
    i: usize,
) -> Result<Vector3<T>> {
    if i > stream.len() || i > rotations.len() {
        return Err(Error::IndexOutOfRange {
            index: i,
            limit: stream.len().min(rotations.len()),
        });
    }
    let dt = stream.dt;
    let fi: T = from_usize(i);
    let mut sum = Vector3::zeros();
    for k in 0..i {
        let beta: T = from_usize(2 * i - 2 * k - 1);
        sum += rotations[k] * stream.samples[k].accel * beta;
    }
    Ok(v0 * (fi * dt) + (sum + g0 * (fi * fi)) * (dt * dt * lit(0.5)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Shutter {
    /// One pose per scanline.
    #[default]
    Rolling,
    /// A whole frame gets the pose of its middle row.
    GlobalMidRow,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum IntegrationMode {
    /// Upsample the IMU to scanline rate, then integrate.
    #[default]
    InterpolateThenIntegrate,
    /// Integrate at the IMU rate, then interpolate poses per scanline.
    IntegrateThenInterpolate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraCalibration<T: Scalar> {
    /// Intrinsics (pixels).
    pub k: Matrix3<T>,
    /// Rotation camera → IMU.
    pub r_cam_imu: Matrix3<T>,
    /// Translation camera → IMU (m).
    pub t_cam_imu: Vector3<T>,
    k_inv: Matrix3<T>,
}

impl<T: Scalar> CameraCalibration<T> {
    pub fn new(k: Matrix3<T>, r_cam_imu: Matrix3<T>, t_cam_imu: Vector3<T>) -> Result<Self> {
        let tol: T = lit(1e-9);
        if k[(1, 0)] != T::zero() || k[(2, 0)] != T::zero() || k[(2, 1)] != T::zero() {
            return Err(Error::invalid("K must be upper triangular"));
        }
        if !(k[(0, 0)] > T::zero() && k[(1, 1)] > T::zero()) {
            return Err(Error::invalid("K must have positive focal lengths"));
        }
        if (k[(2, 2)] - T::one()).abs() > tol {
            return Err(Error::invalid("K must have K[2][2] = 1"));
        }
        let ortho_tol = T::default_epsilon().sqrt() * lit(10.0);
        if so3::orthonormality_error(&r_cam_imu) > ortho_tol {
            return Err(Error::invalid("R_cam_imu must be a rotation (orthonormal, det +1)"));
        }
        let k_inv = k
            .try_inverse()
            .ok_or_else(|| Error::invalid("K is singular"))?;
        Ok(Self {
            k,
            r_cam_imu,
            t_cam_imu,
            k_inv,
        })
    }

    pub fn k_inv(&self) -> &Matrix3<T> {
        &self.k_inv
    }

    /// Derivative of the first two components of `K⁻¹ u` with respect to pixels.
    /// Equals `I₂ / f` for square pixels without skew.
    pub fn k_inv_top(&self) -> Matrix2<T> {
        self.k_inv.fixed_view::<2, 2>(0, 0).into_owned()
    }
}

/// Intrinsics, extrinsics and rolling-shutter timing of a rig.
#[derive(Clone, Debug, PartialEq)]
pub struct RigCalibration<T: Scalar> {
    pub cameras: Vec<CameraCalibration<T>>,
    /// Readout time of one scanline (s).
    pub readout_per_line: T,
    /// Image height in rows.
    pub image_height: usize,
    /// Frame rate (Hz).
    pub fps: T,
}

impl<T: Scalar> RigCalibration<T> {
    pub fn new(
        cameras: Vec<CameraCalibration<T>>,
        readout_per_line: T,
        image_height: usize,
        fps: T,
    ) -> Result<Self> {
        if cameras.is_empty() {
            return Err(Error::invalid("rig needs at least one camera"));
        }
        if !(readout_per_line > T::zero()) {
            return Err(Error::invalid("readout_per_line must be positive"));
        }
        if image_height == 0 {
            return Err(Error::invalid("image_height must be positive"));
        }
        if !(fps > T::zero()) {
            return Err(Error::invalid("fps must be positive"));
        }
        let readout = readout_per_line * from_usize(image_height);
        if readout > T::one() / fps * lit(1.0 + 1e-9) {
            return Err(Error::invalid("frame readout exceeds the frame period"));
        }
        Ok(Self {
            cameras,
            readout_per_line,
            image_height,
            fps,
        })
    }

    pub fn camera(&self, id: usize) -> Result<&CameraCalibration<T>> {
        self.cameras.get(id).ok_or(Error::IndexOutOfRange {
            index: id,
            limit: self.cameras.len(),
        })
    }

    /// Distance between the first two camera centres, if the rig is stereo.
    pub fn baseline(&self) -> Option<T> {
        match self.cameras.as_slice() {
            [a, b, ..] => Some((a.t_cam_imu - b.t_cam_imu).norm()),
            _ => None,
        }
    }

    pub fn clock(&self, shutter: Shutter) -> ScanlineClock<T> {
        ScanlineClock {
            line_period: self.readout_per_line,
            frame_period: T::one() / self.fps,
            image_height: self.image_height,
            shutter,
        }
    }
}

/// IMU pose at scanline `i` relative to the origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose<T: Scalar> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

/// One image measurement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation<T: Scalar> {
    pub cam_id: usize,
    pub frame: usize,
    /// Scanline row, counted from the top of the image.
    pub row: usize,
    /// Homogeneous pixel coordinates, `u[2] == 1`.
    pub u: Vector3<T>,
}

impl<T: Scalar> Observation<T> {
    pub fn new(cam_id: usize, frame: usize, row: usize, x: T, y: T) -> Self {
        Self {
            cam_id,
            frame,
            row,
            u: Vector3::new(x, y, T::one()),
        }
    }

    pub fn validate(&self, calib: &RigCalibration<T>) -> Result<()> {
        calib.camera(self.cam_id)?;
        if self.row >= calib.image_height {
            return Err(Error::IndexOutOfRange {
                index: self.row,
                limit: calib.image_height,
            });
        }
        if self.u[2] != T::one() || !self.u.iter().all(|x| x.is_finite()) {
            return Err(Error::invalid("observation must be finite with u₃ = 1"));
        }
        Ok(())
    }
}

/// Maps `(frame, row)` to a global scanline index.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScanlineClock<T: Scalar> {
    line_period: T,
    frame_period: T,
    image_height: usize,
    shutter: Shutter,
}

impl<T: Scalar> ScanlineClock<T> {
    pub fn line_period(&self) -> T {
        self.line_period
    }

    pub fn shutter(&self) -> Shutter {
        self.shutter
    }

    /// Scanlines between the starts of consecutive frames.
    pub fn lines_per_frame(&self) -> T {
        self.frame_period / self.line_period
    }

    fn effective_row(&self, row: usize) -> usize {
        match self.shutter {
            Shutter::Rolling => row,
            Shutter::GlobalMidRow => self.image_height / 2,
        }
    }

    /// `frame / fps + row * readout_per_line`, exposure offsets ignored.
    pub fn timestamp(&self, frame: usize, row: usize) -> T {
        self.frame_period * from_usize(frame) + self.line_period * from_usize(self.effective_row(row))
    }

    pub fn index(&self, frame: usize, row: usize) -> usize {
        to_f64((self.timestamp(frame, row) / self.line_period).round()) as usize
    }

    /// Index of the bottom row of `frame`.
    pub fn last_index_of_frame(&self, frame: usize) -> usize {
        self.index(frame, self.image_height - 1)
    }
}

/// Per-scanline rotations and IMU-driven displacement terms.
///
/// For every scanline `i` this stores `R_i^0`, the accelerometer part of the
/// translation `d_i = Σ_{k<i} β_{k,i} R_k a_k Δτ²/2` and its rotation-only
/// counterpart `ζ_i = Σ_{k<i} β_{k,i} R_k Δτ²/2`, so that
/// `t_i = i Δτ v0 + i² Δτ²/2 g0 + d_i`.
#[derive(Clone, Debug)]
pub struct ScanlineKinematics<T: Scalar> {
    dt: T,
    rotations: Vec<Matrix3<T>>,
    accel_disp: Vec<Vector3<T>>,
    zeta: Vec<Matrix3<T>>,
}

impl<T: Scalar> ScanlineKinematics<T> {
    /// Integrates a stream sampled at scanline rate. Index 0 is the first sample.
    pub fn integrate(stream: &ImuStream<T>) -> Self {
        let dt = stream.dt();
        let mut rotations = Vec::with_capacity(stream.len() + 1);
        let mut r = Matrix3::identity();
        rotations.push(r);
        for (k, s) in stream.samples().iter().enumerate() {
            r *= so3::exp(&(s.omega * dt));
            if (k + 1) % REORTHONORMALIZE_EVERY == 0 {
                r = so3::orthonormalize(&r);
            }
            rotations.push(r);
        }
        let accels: Vec<_> = stream.samples().iter().map(|s| s.accel).collect();
        Self::from_rotations(dt, rotations, &accels)
            .expect("rotation count matches sample count by construction")
    }

    /// Builds the displacement tables from externally supplied rotations,
    /// e.g. perturbed ones. Needs `rotations.len() == accels.len() + 1`.
    pub fn from_rotations(dt: T, rotations: Vec<Matrix3<T>>, accels: &[Vector3<T>]) -> Result<Self> {
        if rotations.len() != accels.len() + 1 {
            return Err(Error::invalid(format!(
                "expected {} rotations for {} accelerometer samples",
                accels.len() + 1,
                accels.len()
            )));
        }
        let half_dt2 = dt * dt * lit(0.5);
        let n = rotations.len();
        let mut accel_disp = Vec::with_capacity(n);
        let mut zeta = Vec::with_capacity(n);
        // β_{k,i+1} = β_{k,i} + 2, so Σβ grows by twice the running sum plus the new term.
        let mut sum_ra = Vector3::zeros();
        let mut beta_ra = Vector3::zeros();
        let mut sum_r = Matrix3::zeros();
        let mut beta_r = Matrix3::zeros();
        accel_disp.push(Vector3::zeros());
        zeta.push(Matrix3::zeros());
        let two: T = lit(2.0);
        for (k, a) in accels.iter().enumerate() {
            let rk = rotations[k];
            let ra = rk * a;
            beta_ra += sum_ra * two + ra;
            sum_ra += ra;
            beta_r += sum_r * two + rk;
            sum_r += rk;
            accel_disp.push(beta_ra * half_dt2);
            zeta.push(beta_r * half_dt2);
        }
        Ok(Self {
            dt,
            rotations,
            accel_disp,
            zeta,
        })
    }

    /// Builds kinematics for scanlines `0..=count` (origin at time 0) from a
    /// raw IMU stream.
    pub fn from_raw(
        raw: &ImuStream<T>,
        line_period: T,
        count: usize,
        mode: IntegrationMode,
    ) -> Result<Self> {
        let count = count.max(1);
        let needed = line_period * from_usize(count);
        if raw.t0() > line_period * lit(1e-9) || raw.end_time() + raw.dt() * lit(1e-9) < needed - line_period {
            return Err(Error::OutsideCoverage {
                index: count,
                available: to_f64(((raw.end_time() - raw.t0().max(T::zero())) / line_period).max(T::zero()))
                    as usize,
            });
        }
        match mode {
            IntegrationMode::InterpolateThenIntegrate => {
                let fine = raw.resample(T::zero(), line_period, count)?;
                Ok(Self::integrate(&fine))
            }
            IntegrationMode::IntegrateThenInterpolate => {
                Self::integrate_then_interpolate(raw, line_period, count)
            }
        }
    }

    fn integrate_then_interpolate(raw: &ImuStream<T>, line_period: T, count: usize) -> Result<Self> {
        let raw_dt = raw.dt();
        let span = line_period * from_usize(count);
        let raw_count = (to_f64(span / raw_dt).floor() as usize + 2)
            .min(to_f64(((raw.end_time() - T::zero()) / raw_dt).floor()) as usize + 1);
        let coarse = raw.resample(T::zero(), raw_dt, raw_count.max(1))?;
        let base = Self::integrate(&coarse);
        let accels: Vec<_> = coarse.samples().iter().map(|s| s.accel).collect();
        let half: T = lit(0.5);
        let last = base.rotations.len() - 1;

        // Zero-order-hold velocity terms at the coarse nodes.
        let mut vel_a = Vec::with_capacity(base.rotations.len());
        let mut vel_r = Vec::with_capacity(base.rotations.len());
        let mut sa = Vector3::zeros();
        let mut sr = Matrix3::zeros();
        vel_a.push(sa);
        vel_r.push(sr);
        for (k, a) in accels.iter().enumerate() {
            sa += base.rotations[k] * a * raw_dt;
            sr += base.rotations[k] * raw_dt;
            vel_a.push(sa);
            vel_r.push(sr);
        }

        let mut rotations = Vec::with_capacity(count + 1);
        let mut accel_disp = Vec::with_capacity(count + 1);
        let mut zeta = Vec::with_capacity(count + 1);
        for i in 0..=count {
            let tau = line_period * from_usize(i);
            let x = tau / raw_dt;
            let node = (to_f64(x.floor()) as usize).min(last);
            let s = tau - raw_dt * from_usize(node);
            let (r, d, z) = if node >= accels.len() {
                (base.rotations[node], base.accel_disp[node], base.zeta[node])
            } else {
                let rk = base.rotations[node];
                let r = so3::slerp(&rk, &base.rotations[node + 1], s / raw_dt);
                let d = base.accel_disp[node] + vel_a[node] * s + rk * accels[node] * (s * s * half);
                let z = base.zeta[node] + vel_r[node] * s + rk * (s * s * half);
                (r, d, z)
            };
            rotations.push(r);
            accel_disp.push(d);
            zeta.push(z);
        }
        Ok(Self {
            dt: line_period,
            rotations,
            accel_disp,
            zeta,
        })
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    /// Number of scanline indices covered (`0..len()`).
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn rotations(&self) -> &[Matrix3<T>] {
        &self.rotations
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.rotations.len() {
            Err(Error::OutsideCoverage {
                index: i,
                available: self.rotations.len(),
            })
        } else {
            Ok(())
        }
    }

    pub fn rotation(&self, i: usize) -> Result<&Matrix3<T>> {
        self.check(i)?;
        Ok(&self.rotations[i])
    }

    /// Accelerometer contribution to `t_i` (m).
    pub fn accel_displacement(&self, i: usize) -> Result<&Vector3<T>> {
        self.check(i)?;
        Ok(&self.accel_disp[i])
    }

    /// `Σ_{k<i} β_{k,i} R_k Δτ²/2` (s²).
    pub fn zeta(&self, i: usize) -> Result<&Matrix3<T>> {
        self.check(i)?;
        Ok(&self.zeta[i])
    }

    /// Coefficients `(i Δτ, i² Δτ²/2)` multiplying `v0` and `g0` in `t_i`.
    pub fn motion_coefficients(&self, i: usize) -> (T, T) {
        let t = self.dt * from_usize(i);
        (t, t * t * lit(0.5))
    }

    pub fn translation(&self, i: usize, v0: &Vector3<T>, g0: &Vector3<T>) -> Result<Vector3<T>> {
        self.check(i)?;
        let (a, b) = self.motion_coefficients(i);
        Ok(v0 * a + g0 * b + self.accel_disp[i])
    }

    pub fn pose(&self, i: usize, v0: &Vector3<T>, g0: &Vector3<T>) -> Result<Pose<T>> {
        Ok(Pose {
            rotation: *self.rotation(i)?,
            translation: self.translation(i, v0, g0)?,
        })
    }
}

/// Pose of the scanline `(frame, row)` via interpolate-then-integrate.
pub fn scanline_pose<T: Scalar>(
    stream: &ImuStream<T>,
    calib: &RigCalibration<T>,
    frame: usize,
    row: usize,
    v0: &Vector3<T>,
    g0: &Vector3<T>,
    shutter: Shutter,
) -> Result<Pose<T>> {
    let clock = calib.clock(shutter);
    let i = clock.index(frame, row);
    let kin = ScanlineKinematics::from_raw(
        stream,
        clock.line_period(),
        i,
        IntegrationMode::InterpolateThenIntegrate,
    )?;
    kin.pose(i, v0, g0)
}

/// A calibrated ray `p = N(p̃)` with `p̃ = R_i^0 R_c^imu K⁻¹ u`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Ray<T: Scalar> {
    pub p: Vector3<T>,
    pub p_tilde: Vector3<T>,
    /// `R_i^0 R_c^imu`.
    pub r_tilde: Matrix3<T>,
}

pub fn ray<T: Scalar>(obs: &Observation<T>, calib: &RigCalibration<T>, r_i0: &Matrix3<T>) -> Result<Ray<T>> {
    let cam = calib.camera(obs.cam_id)?;
    let r_tilde = r_i0 * cam.r_cam_imu;
    let p_tilde = r_tilde * (cam.k_inv() * obs.u);
    let pz = p_tilde.z;
    if pz.abs() <= ray_epsilon::<T>() * p_tilde.norm() {
        return Err(Error::DegenerateRay(to_f64(pz)));
    }
    Ok(Ray {
        p: p_tilde / pz,
        p_tilde,
        r_tilde,
    })
}

/// Homogeneous ray normalized by its third coordinate.
pub fn calibrated_ray<T: Scalar>(
    obs: &Observation<T>,
    calib: &RigCalibration<T>,
    r_i0: &Matrix3<T>,
) -> Result<Vector3<T>> {
    Ok(ray(obs, calib, r_i0)?.p)
}

/// Bundles the inputs every assembly step needs.
#[derive(Clone, Copy, Debug)]
pub struct SceneGeometry<'a, T: Scalar> {
    pub calib: &'a RigCalibration<T>,
    pub kinematics: &'a ScanlineKinematics<T>,
    pub clock: ScanlineClock<T>,
}

impl<'a, T: Scalar> SceneGeometry<'a, T> {
    pub fn new(calib: &'a RigCalibration<T>, kinematics: &'a ScanlineKinematics<T>, shutter: Shutter) -> Self {
        Self {
            calib,
            kinematics,
            clock: calib.clock(shutter),
        }
    }

    pub fn scanline(&self, obs: &Observation<T>) -> usize {
        self.clock.index(obs.frame, obs.row)
    }

    pub fn ray(&self, obs: &Observation<T>) -> Result<Ray<T>> {
        let r = self.kinematics.rotation(self.scanline(obs))?;
        ray(obs, self.calib, r)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn constant_stream(omega: Vector3<f64>, accel: Vector3<f64>, n: usize, dt: f64) -> ImuStream<f64> {
        ImuStream::new(vec![ImuSample::new(omega, accel); n], dt, 0.0).unwrap()
    }

    fn random_stream(rng: &mut ChaCha8Rng, n: usize, dt: f64) -> ImuStream<f64> {
        let samples = (0..n)
            .map(|_| {
                ImuSample::new(
                    Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)),
                    Vector3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(5.0..12.0)),
                )
            })
            .collect();
        ImuStream::new(samples, dt, 0.0).unwrap()
    }

    fn vga_rig() -> RigCalibration<f64> {
        let k = Matrix3::new(460.0, 0.0, 320.0, 0.0, 460.0, 240.0, 0.0, 0.0, 1.0);
        let cam = CameraCalibration::new(k, Matrix3::identity(), Vector3::zeros()).unwrap();
        RigCalibration::new(vec![cam], 1.0 / 47_600.0, 480, 10.0).unwrap()
    }

    #[test]
    fn stream_validation() {
        let s = ImuSample::new(Vector3::zeros(), Vector3::zeros());
        assert!(ImuStream::new(vec![s], 0.0, 0.0).is_err());
        assert!(ImuStream::<f64>::new(vec![], 0.01, 0.0).is_err());
        let fast = ImuSample::new(Vector3::new(60.0, 0.0, 0.0), Vector3::zeros());
        assert!(ImuStream::new(vec![fast], 0.01, 0.0).is_err());
        let nan = ImuSample::new(Vector3::new(f64::NAN, 0.0, 0.0), Vector3::zeros());
        assert!(ImuStream::new(vec![nan], 0.01, 0.0).is_err());
    }

    #[test]
    fn upsample_constant_is_constant() {
        let s = constant_stream(Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 2.0, 9.0), 11, 0.01);
        let up = upsample_imu(&s, 0.0025).unwrap();
        assert_eq!(up.len(), 41);
        for x in up.samples() {
            assert_relative_eq!(x.omega, s.samples()[0].omega, epsilon = 1e-15);
            assert_relative_eq!(x.accel, s.samples()[0].accel, epsilon = 1e-15);
        }
    }

    #[test]
    fn upsample_linear_midpoint() {
        let s = ImuStream::new(
            vec![
                ImuSample::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 1.0)),
                ImuSample::new(Vector3::zeros(), Vector3::new(0.0, 0.0, 3.0)),
            ],
            0.01,
            0.0,
        )
        .unwrap();
        let up = upsample_imu(&s, 0.005).unwrap();
        assert_eq!(up.len(), 3);
        assert_relative_eq!(up.samples()[1].accel, Vector3::new(0.0, 0.0, 2.0), epsilon = 1e-15);
        assert_eq!(up.samples()[0], s.samples()[0]);
        assert_eq!(up.samples()[2], s.samples()[1]);
    }

    #[test]
    fn upsample_800hz_to_scanline_rate() {
        let s = constant_stream(Vector3::zeros(), Vector3::new(0.0, 9.81, 0.0), 801, 1.0 / 800.0);
        let up = upsample_imu(&s, 1.0 / 47_600.0).unwrap();
        // One second of data at 47.6 kHz.
        assert_eq!(up.len(), 47_601);
        assert_relative_eq!(up.end_time(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn upsample_rejects_bad_periods() {
        let s = constant_stream(Vector3::zeros(), Vector3::zeros(), 4, 0.01);
        assert!(upsample_imu(&s, 0.0).is_err());
        assert!(upsample_imu(&s, -1.0).is_err());
        assert!(upsample_imu(&s, 0.02).is_err());
    }

    #[test]
    fn rotation_identity_and_quarter_turn() {
        let s = constant_stream(Vector3::new(0.0, 0.0, FRAC_PI_2), Vector3::zeros(), 10, 0.1);
        assert_eq!(integrate_rotation(&s, 0).unwrap(), Matrix3::identity());
        let r = integrate_rotation(&s, 10).unwrap();
        let expected = so3::exp(&Vector3::new(0.0, 0.0, FRAC_PI_2));
        assert!((r - expected).norm() / expected.norm() < 1e-12);
        assert!(integrate_rotation(&s, 11).is_err());
    }

    #[test]
    fn rotation_recurrence() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = random_stream(&mut rng, 50, 0.01);
        let r49 = integrate_rotation(&s, 49).unwrap();
        let r50 = integrate_rotation(&s, 50).unwrap();
        let step = so3::exp(&(s.samples()[49].omega * 0.01));
        assert_relative_eq!(r50, r49 * step, epsilon = 1e-13);
    }

    #[test]
    fn long_products_stay_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = random_stream(&mut rng, 10_000, 1e-3);
        let r = integrate_rotation(&s, 10_000).unwrap();
        assert!(so3::orthonormality_error(&r) < 1e-10);
        let kin = ScanlineKinematics::integrate(&s);
        assert!(so3::orthonormality_error(&kin.rotations()[10_000]) < 1e-10);
    }

    #[test]
    fn translation_closed_forms() {
        let dt = 0.01;
        let still = constant_stream(Vector3::zeros(), Vector3::zeros(), 200, dt);
        let rots = vec![Matrix3::identity(); 201];
        let z = Vector3::zeros();
        for i in [0, 1, 50, 200] {
            assert_eq!(integrate_translation(&still, &rots, &z, &z, i).unwrap(), z);
        }
        let v = Vector3::new(1.0, 0.0, 0.0);
        let t = integrate_translation(&still, &rots, &v, &z, 100).unwrap();
        assert_relative_eq!(t, Vector3::new(1.0, 0.0, 0.0), epsilon = 1e-12);

        let c = 0.7;
        let pushed = constant_stream(Vector3::zeros(), Vector3::new(c, 0.0, 0.0), 200, dt);
        for i in [1usize, 7, 100, 200] {
            let t = integrate_translation(&pushed, &rots, &z, &z, i).unwrap();
            let fi = i as f64;
            assert_relative_eq!(t.x, fi * fi * c * dt * dt / 2.0, max_relative = 1e-12);
        }
    }

    #[test]
    fn beta_sums_to_square() {
        for i in 1..200usize {
            let sum: usize = (0..i).map(|k| 2 * i - 2 * k - 1).sum();
            assert_eq!(sum, i * i);
        }
    }

    #[test]
    fn kinematics_recurrence_matches_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = random_stream(&mut rng, 300, 2e-3);
        let kin = ScanlineKinematics::integrate(&s);
        let v0 = Vector3::new(0.3, -0.1, 0.8);
        let g0 = Vector3::new(0.2, 9.7, -0.4);
        for i in [0usize, 1, 2, 17, 150, 300] {
            let direct = integrate_translation(&s, kin.rotations(), &v0, &g0, i).unwrap();
            assert_relative_eq!(kin.translation(i, &v0, &g0).unwrap(), direct, epsilon = 1e-12);
            let direct_rot = integrate_rotation(&s, i).unwrap();
            assert_relative_eq!(*kin.rotation(i).unwrap(), direct_rot, epsilon = 1e-12);
        }
    }

    #[test]
    fn translation_superposition() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s = random_stream(&mut rng, 120, 5e-3);
        let kin = ScanlineKinematics::integrate(&s);
        let z = Vector3::zeros();
        for _ in 0..20 {
            let v = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let g = Vector3::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let i = rng.random_range(0..=120usize);
            let base = kin.translation(i, &z, &z).unwrap();
            let fi = i as f64;
            let dt = 5e-3;
            let expected = base + v * (fi * dt) + g * (fi * fi * dt * dt / 2.0);
            assert_relative_eq!(kin.translation(i, &v, &g).unwrap(), expected, epsilon = 1e-13);
        }
    }

    #[test]
    fn integration_modes_agree_for_constant_rate() {
        let raw_dt = 1.0 / 800.0;
        let line = 1.0 / 47_600.0;
        let spinning = constant_stream(Vector3::new(0.3, -0.5, 1.1), Vector3::zeros(), 400, raw_dt);
        let count = 20_000;
        let a = ScanlineKinematics::from_raw(&spinning, line, count, IntegrationMode::InterpolateThenIntegrate).unwrap();
        let b = ScanlineKinematics::from_raw(&spinning, line, count, IntegrationMode::IntegrateThenInterpolate).unwrap();
        for i in (0..=count).step_by(997) {
            assert_relative_eq!(a.rotations()[i], b.rotations()[i], epsilon = 1e-11);
            assert!(a.accel_displacement(i).unwrap().norm() == 0.0);
            assert!(b.accel_displacement(i).unwrap().norm() == 0.0);
        }
        let pushing = constant_stream(Vector3::zeros(), Vector3::new(0.4, 9.0, -1.0), 400, raw_dt);
        let a = ScanlineKinematics::from_raw(&pushing, line, count, IntegrationMode::InterpolateThenIntegrate).unwrap();
        let b = ScanlineKinematics::from_raw(&pushing, line, count, IntegrationMode::IntegrateThenInterpolate).unwrap();
        for i in (0..=count).step_by(997) {
            assert_relative_eq!(a.accel_displacement(i).unwrap(), b.accel_displacement(i).unwrap(), epsilon = 1e-12);
            assert_relative_eq!(a.zeta(i).unwrap(), b.zeta(i).unwrap(), epsilon = 1e-12);
        }
    }

    #[test]
    fn coverage_is_checked() {
        let s = constant_stream(Vector3::zeros(), Vector3::zeros(), 9, 1.0 / 800.0);
        let line = 1.0 / 47_600.0;
        assert!(ScanlineKinematics::from_raw(&s, line, 100, IntegrationMode::InterpolateThenIntegrate).is_ok());
        assert!(matches!(
            ScanlineKinematics::from_raw(&s, line, 10_000, IntegrationMode::InterpolateThenIntegrate),
            Err(Error::OutsideCoverage { .. })
        ));
    }

    #[test]
    fn scanline_pose_examples() {
        let calib = vga_rig();
        let v0 = Vector3::new(0.5, 0.0, 1.0);
        let z = Vector3::zeros();
        let s = constant_stream(Vector3::zeros(), Vector3::zeros(), 81, 1.0 / 800.0);
        let p = scanline_pose(&s, &calib, 0, 0, &v0, &z, Shutter::Rolling).unwrap();
        assert_eq!(p.rotation, Matrix3::identity());
        assert_eq!(p.translation, z);
        let p = scanline_pose(&s, &calib, 0, 240, &v0, &z, Shutter::Rolling).unwrap();
        assert_relative_eq!(p.translation, v0 * (240.0 / 47_600.0), epsilon = 1e-15);

        let clock = calib.clock(Shutter::GlobalMidRow);
        assert_eq!(clock.index(1, 0), clock.index(1, 479));
        assert_eq!(clock.index(1, 17), calib.clock(Shutter::Rolling).index(1, 240));
        let far = scanline_pose(&s, &calib, 3, 0, &v0, &z, Shutter::Rolling);
        assert!(matches!(far, Err(Error::OutsideCoverage { .. })));
    }

    #[test]
    fn calibrated_ray_examples() {
        let calib = vga_rig();
        let center = Observation::new(0, 0, 240, 320.0, 240.0);
        let p = calibrated_ray(&center, &calib, &Matrix3::identity()).unwrap();
        assert_relative_eq!(p, Vector3::new(0.0, 0.0, 1.0));
        let right = Observation::new(0, 0, 240, 320.0 + 460.0, 240.0);
        let p = calibrated_ray(&right, &calib, &Matrix3::identity()).unwrap();
        assert_relative_eq!(p, Vector3::new(1.0, 0.0, 1.0), epsilon = 1e-15);

        // Looking sideways: the ray is parallel to the normalization plane.
        let sideways = so3::exp(&Vector3::new(0.0, FRAC_PI_2, 0.0));
        assert!(matches!(
            calibrated_ray(&center, &calib, &sideways),
            Err(Error::DegenerateRay(_))
        ));
    }

    #[test]
    fn normalization_is_idempotent() {
        let calib = vga_rig();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let obs = Observation::new(0, 0, 10, rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let r = so3::exp(&Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-3.0..3.0)));
            let p = calibrated_ray(&obs, &calib, &r).unwrap();
            assert_relative_eq!(p / p.z, p, epsilon = 1e-15);
        }
    }

    #[test]
    fn calibration_validation() {
        let k = Matrix3::new(460.0, 0.0, 320.0, 0.0, 460.0, 240.0, 0.0, 0.0, 1.0);
        let bad_k = Matrix3::new(460.0, 0.0, 320.0, 1.0, 460.0, 240.0, 0.0, 0.0, 1.0);
        assert!(CameraCalibration::new(bad_k, Matrix3::identity(), Vector3::zeros()).is_err());
        let reflect = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(CameraCalibration::new(k, reflect, Vector3::zeros()).is_err());
        let cam = CameraCalibration::new(k, Matrix3::identity(), Vector3::zeros()).unwrap();
        // 480 rows at 1 ms each do not fit into a 10 Hz frame.
        assert!(RigCalibration::new(vec![cam.clone()], 1e-3, 480, 10.0).is_err());
        assert!(RigCalibration::new(vec![cam], 1.0 / 47_600.0, 480, 10.0).is_ok());
    }
}
