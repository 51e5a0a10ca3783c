//! Optional accelerometer and gyroscope bias unknowns.
//!
//! Biases follow the sensor convention `measured = true + bias`. Both are
//! constant over the window, and the gyroscope bias enters to first order only.

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::estimators::solve_ls;
use crate::geometry::{ImuSample, ImuStream, Observation, RigCalibration, SceneGeometry, ScanlineKinematics};
use crate::scalar::{lit, Scalar};
use crate::so3;
use crate::system::{assemble, assemble_with, reduce, AssemblyOptions, CorrespondenceSet, FullSystem, ParamLayout};

/// Which biases become unknowns, plus known biases to remove beforehand.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BiasConfig<T: Scalar> {
    pub model_accel: bool,
    pub model_gyro: bool,
    /// Known accelerometer bias (m/s²), ignored when `model_accel` is set.
    pub accel: Option<Vector3<T>>,
    /// Known gyroscope bias (rad/s), ignored when `model_gyro` is set.
    pub gyro: Option<Vector3<T>>,
}

impl<T: Scalar> BiasConfig<T> {
    pub fn off() -> Self {
        Self {
            model_accel: false,
            model_gyro: false,
            accel: None,
            gyro: None,
        }
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            accel_bias: self.model_accel,
            gyro_bias: self.model_gyro,
        }
    }

    pub fn is_off(&self) -> bool {
        !self.model_accel && !self.model_gyro
    }

    /// Subtracts the known, unmodeled biases from a raw stream.
    pub fn correct_stream(&self, stream: &ImuStream<T>) -> Result<ImuStream<T>> {
        let ea = if self.model_accel { None } else { self.accel };
        let ew = if self.model_gyro { None } else { self.gyro };
        if ea.is_none() && ew.is_none() {
            return Ok(stream.clone());
        }
        let ea = ea.unwrap_or_else(Vector3::zeros);
        let ew = ew.unwrap_or_else(Vector3::zeros);
        let samples = stream
            .samples()
            .iter()
            .map(|s| ImuSample::new(s.omega - ew, s.accel - ea))
            .collect();
        ImuStream::new(samples, stream.dt(), stream.t0())
    }
}

/// `ζ_ij = ζ_i − ζ_j`, the coefficient of the accelerometer bias in `κ_ij`
/// up to sign.
pub fn accel_bias_columns<T: Scalar>(kin: &ScanlineKinematics<T>, i: usize, j: usize) -> Result<Matrix3<T>> {
    Ok(kin.zeta(i)? - kin.zeta(j)?)
}

/// First-order sensitivity tables of the scanline kinematics to a gyroscope
/// bias `e`.
///
/// `rotation_jacobian(i)` is `D_i` with `R_i(ω − e) ≈ R_i Exp(−D_i e)`.
/// `displacement_jacobian(i)` is `∂d_i/∂e`.
#[derive(Clone, Debug)]
pub struct GyroBiasKinematics<T: Scalar> {
    dt: T,
    rot: Vec<Matrix3<T>>,
    disp: Vec<Matrix3<T>>,
}

impl<T: Scalar> GyroBiasKinematics<T> {
    /// Tables for a stream sampled at scanline rate, matching
    /// [`ScanlineKinematics::integrate`].
    pub fn from_stream(stream: &ImuStream<T>) -> Self {
        let dt = stream.dt();
        let n = stream.len() + 1;
        let mut rot = Vec::with_capacity(n);
        let mut disp = Vec::with_capacity(n);
        let mut r = Matrix3::<T>::identity();
        let mut d = Matrix3::<T>::zeros();
        let mut sum_x = Matrix3::<T>::zeros();
        let mut beta_x = Matrix3::<T>::zeros();
        rot.push(d);
        disp.push(Matrix3::zeros());
        let two: T = lit(2.0);
        let half_dt2 = dt * dt * lit(0.5);
        for s in stream.samples() {
            let x = r * so3::skew(&s.accel) * d;
            beta_x += sum_x * two + x;
            sum_x += x;
            let step = so3::exp(&(s.omega * dt));
            d = step.transpose() * d + so3::right_jacobian(&(s.omega * dt)) * dt;
            r *= step;
            rot.push(d);
            disp.push(beta_x * half_dt2);
        }
        Self { dt, rot, disp }
    }

    /// Tables for scanlines `0..=count` from a raw stream, resampled to the
    /// line period first.
    pub fn from_raw(raw: &ImuStream<T>, line_period: T, count: usize) -> Result<Self> {
        let fine = raw.resample(T::zero(), line_period, count.max(1))?;
        Ok(Self::from_stream(&fine))
    }

    pub fn dt(&self) -> T {
        self.dt
    }

    pub fn len(&self) -> usize {
        self.rot.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rot.is_empty()
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.rot.len() {
            return Err(Error::OutsideCoverage {
                index: i,
                available: self.rot.len(),
            });
        }
        Ok(())
    }

    pub fn rotation_jacobian(&self, i: usize) -> Result<&Matrix3<T>> {
        self.check(i)?;
        Ok(&self.rot[i])
    }

    pub fn displacement_jacobian(&self, i: usize) -> Result<&Matrix3<T>> {
        self.check(i)?;
        Ok(&self.disp[i])
    }
}

/// Gyroscope-bias Jacobians of one observation at scanline `i`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GyroBiasJacobians<T: Scalar> {
    /// `∂(R_i t_c + d_i)/∂e`, this observation's share of `∂κ/∂e`.
    pub kappa: Matrix3<T>,
    /// `∂p_i/∂e` for the ray with unit third component.
    pub ray: Matrix3<T>,
}

pub fn gyro_bias_jacobians<T: Scalar>(
    i: usize,
    gyro: &GyroBiasKinematics<T>,
    kin: &ScanlineKinematics<T>,
    calib: &RigCalibration<T>,
    obs: &Observation<T>,
) -> Result<GyroBiasJacobians<T>> {
    let cam = calib.camera(obs.cam_id)?;
    let r = kin.rotation(i)?;
    let d = gyro.rotation_jacobian(i)?;
    let ray = crate::geometry::ray(obs, calib, r)?;
    let kappa = r * so3::skew(&cam.t_cam_imu) * d + gyro.displacement_jacobian(i)?;
    let w = cam.r_cam_imu * (cam.k_inv() * obs.u);
    let dp_tilde = r * so3::skew(&w) * d;
    let j_n = (Matrix3::identity() - ray.p * Vector3::z().transpose()) / ray.p_tilde.z;
    Ok(GyroBiasJacobians {
        kappa,
        ray: j_n * dp_tilde,
    })
}

/// Assembles the system with the bias unknowns of `cfg` appended after `g0`.
///
/// The gyroscope columns need depths; they come from a bias-free
/// least-squares solve of the same correspondences. `gyro` must be given when
/// `cfg.model_gyro` is set.
pub fn assemble_with_bias<T: Scalar>(
    set: &CorrespondenceSet<T>,
    geom: &SceneGeometry<'_, T>,
    opts: &AssemblyOptions,
    cfg: &BiasConfig<T>,
    gyro: Option<&GyroBiasKinematics<T>>,
) -> Result<FullSystem<T>> {
    if cfg.is_off() {
        return assemble(set, geom, opts);
    }
    let layout = cfg.layout();
    let kin = geom.kinematics;

    let depths = match (cfg.model_gyro, gyro) {
        (false, _) => None,
        (true, None) => return Err(Error::invalid("gyroscope bias modeling needs gyro-bias kinematics")),
        (true, Some(_)) => {
            let base_layout = ParamLayout {
                accel_bias: cfg.model_accel,
                gyro_bias: false,
            };
            let base = assemble_with(set, geom, opts, base_layout, |ctx, cols, _| {
                if base_layout.accel_bias {
                    cols.copy_from(&-accel_bias_columns(kin, ctx.a.scanline, ctx.b.scanline)?);
                }
                Ok(())
            })?;
            let reduced = reduce(base)?;
            let est = solve_ls(&reduced)?;
            let d = reduced.recover_depths(&est.y)?;
            // Column order is deterministic, so observation indices line up.
            let by_obs: std::collections::HashMap<usize, T> = reduced
                .full()
                .columns()
                .iter()
                .zip(d.lambda)
                .map(|(c, l)| (c.observation, l))
                .collect();
            Some(by_obs)
        }
    };

    let accel_off = layout.accel_offset().map(|o| o - 6);
    let gyro_off = layout.gyro_offset().map(|o| o - 6);
    assemble_with(set, geom, opts, layout, |ctx, cols: &mut DMatrix<T>, _| {
        if let Some(o) = accel_off {
            let z = accel_bias_columns(kin, ctx.a.scanline, ctx.b.scanline)?;
            cols.view_mut((0, o), (3, 3)).copy_from(&-z);
        }
        if let (Some(o), Some(g), Some(depths)) = (gyro_off, gyro, depths.as_ref()) {
            let obs = set.observations();
            let ja = gyro_bias_jacobians(ctx.a.scanline, g, kin, geom.calib, &obs[ctx.a.observation].obs)?;
            let jb = gyro_bias_jacobians(ctx.b.scanline, g, kin, geom.calib, &obs[ctx.b.observation].obs)?;
            let la = depths[&ctx.a.observation];
            let lb = depths[&ctx.b.observation];
            let c = ja.kappa - jb.kappa + ja.ray * la - jb.ray * lb;
            cols.view_mut((0, o), (3, 3)).copy_from(&c);
        }
        Ok(())
    })
}
