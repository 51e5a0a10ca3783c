use nalgebra::Vector3;

use crate::{Result, SynthError};

/// Velocity error norm (m/s) and gravity direction error (deg).
pub fn error_metrics(
    v0: &Vector3<f64>,
    g0: &Vector3<f64>,
    v0_gt: &Vector3<f64>,
    g0_gt: &Vector3<f64>,
) -> Result<(f64, f64)> {
    if !(v0.iter().chain(g0.iter()).all(|x| x.is_finite())) {
        return Err(SynthError::Config("non-finite estimate".into()));
    }
    if g0.norm() == 0.0 || g0_gt.norm() == 0.0 {
        return Err(SynthError::Config("zero-length gravity vector".into()));
    }
    let eps_v = (v0 - v0_gt).norm();
    // atan2 stays accurate for tiny and near-antipodal angles.
    let eps_g = g0.cross(g0_gt).norm().atan2(g0.dot(g0_gt)).to_degrees();
    Ok((eps_v, eps_g))
}

/// Variance (rad²) of the direction of `g0` given the covariance of `g0`.
pub(crate) fn direction_variance(g0: &Vector3<f64>, cov_g: &nalgebra::Matrix3<f64>) -> f64 {
    let n = g0.norm_squared();
    let p = nalgebra::Matrix3::identity() - g0 * g0.transpose() / n;
    (p * cov_g * p).trace() / n
}
