//! Rotation helpers: exponential map, right Jacobian, projection onto SO(3)
//! and geodesic interpolation.

use nalgebra::{Matrix3, Rotation3, Vector3};

use crate::scalar::{lit, Scalar};

/// Below this angle the exponential map and right Jacobian switch to their
/// first-order expansions.
pub const SMALL_ANGLE: f64 = 1e-8;

#[inline]
pub fn skew<T: Scalar>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Rodrigues' formula. Uses the half-angle form of `1 - cos θ` so that it
/// stays accurate for the tiny per-scanline increments.
pub fn exp<T: Scalar>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let k = skew(phi);
    let theta = theta2.sqrt();
    if theta < lit(SMALL_ANGLE) {
        return Matrix3::identity() + k;
    }
    let half = theta * lit(0.5);
    let a = theta.sin() / theta;
    let s = half.sin() / half;
    let b = s * s * lit(0.5);
    Matrix3::identity() + k * a + k * k * b
}

/// Right Jacobian `J_r(φ)` with `Exp(φ + δ) ≈ Exp(φ) Exp(J_r(φ) δ)`.
pub fn right_jacobian<T: Scalar>(phi: &Vector3<T>) -> Matrix3<T> {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let k = skew(phi);
    if theta < lit(SMALL_ANGLE) {
        return Matrix3::<T>::identity() - k * lit::<T>(0.5);
    }
    let half = theta * lit(0.5);
    let s = half.sin() / half;
    // (1 - cos θ) / θ²
    let a = s * s * lit(0.5);
    // (θ - sin θ) / θ³, series below 1e-2 rad where the closed form cancels.
    let b = if theta < lit(1e-2) {
        lit::<T>(1.0 / 6.0) - theta2 / lit(120.0) + theta2 * theta2 / lit(5040.0)
    } else {
        (theta - theta.sin()) / (theta2 * theta)
    };
    Matrix3::identity() - k * a + k * k * b
}

/// Logarithm map of a rotation matrix (axis times angle).
pub fn log<T: Scalar>(r: &Matrix3<T>) -> Vector3<T> {
    // sin θ · axis from the skew part, cos θ from the trace; atan2 keeps the
    // angle accurate where acos of the trace would cancel.
    let half: T = lit(0.5);
    let v = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]) * half;
    let c = (r.trace() - T::one()) * half;
    let s = v.norm();
    if c < lit(-0.9) {
        // Near π the skew part vanishes and the axis comes from the symmetric part.
        return Rotation3::from_matrix_unchecked(*r).scaled_axis();
    }
    let theta = s.atan2(c);
    let k = if theta < lit(1e-4) {
        T::one() + theta * theta / lit(6.0)
    } else {
        theta / s
    };
    v * k
}

/// Nearest rotation in the Frobenius sense.
pub fn orthonormalize<T: Scalar>(r: &Matrix3<T>) -> Matrix3<T> {
    let svd = r.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut out = u * v_t;
    if out.determinant() < T::zero() {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -T::one();
        out = u * d * v_t;
    }
    out
}

/// Geodesic interpolation `R0 Exp(s Log(R0ᵀ R1))`.
pub fn slerp<T: Scalar>(r0: &Matrix3<T>, r1: &Matrix3<T>, s: T) -> Matrix3<T> {
    let delta = log(&(r0.transpose() * r1));
    r0 * exp(&(delta * s))
}

/// Largest deviation from orthonormality, `max |RᵀR - I|` together with `|det R - 1|`.
pub fn orthonormality_error<T: Scalar>(r: &Matrix3<T>) -> T {
    let e = (r.transpose() * r - Matrix3::identity()).abs().max();
    let d = (r.determinant() - T::one()).abs();
    if e > d {
        e
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn exp_matches_nalgebra() {
        let phi = Vector3::new(0.3, -0.2, 0.9);
        let r = exp(&phi);
        let reference = Rotation3::new(phi);
        assert_relative_eq!(r, *reference.matrix(), epsilon = 1e-14);
    }

    #[test]
    fn exp_at_rest_is_identity() {
        assert_eq!(exp(&Vector3::<f64>::zeros()), Matrix3::identity());
        let tiny = Vector3::new(1e-12, 0.0, 0.0);
        assert!(orthonormality_error(&exp(&tiny)) < 1e-15);
    }

    #[test]
    fn right_jacobian_first_order() {
        let phi = Vector3::new(0.4, 0.1, -0.7);
        let delta = Vector3::new(1e-6, -2e-6, 0.5e-6);
        let lhs = exp(&(phi + delta));
        let rhs = exp(&phi) * exp(&(right_jacobian(&phi) * delta));
        assert_relative_eq!(lhs, rhs, epsilon = 1e-11);
    }

    #[test]
    fn right_jacobian_series_branch_is_continuous() {
        let dir = Vector3::new(0.6, 0.0, 0.8);
        let below = right_jacobian(&(dir * 0.999e-2));
        let above = right_jacobian(&(dir * 1.001e-2));
        assert_relative_eq!(below, above, epsilon = 1e-4);
    }

    #[test]
    fn orthonormalize_fixes_drift() {
        let mut r = exp(&Vector3::new(0.1, 0.2, 0.3));
        r[(0, 1)] += 1e-4;
        let fixed = orthonormalize(&r);
        assert!(orthonormality_error(&fixed) < 1e-14);
        assert!((fixed - r).norm() < 1e-3);
    }

    #[test]
    fn slerp_endpoints_and_midpoint() {
        let r0 = exp(&Vector3::new(0.0, 0.0, 0.2));
        let r1 = exp(&Vector3::new(0.0, 0.0, 0.6));
        assert_relative_eq!(slerp(&r0, &r1, 0.0), r0, epsilon = 1e-14);
        assert_relative_eq!(slerp(&r0, &r1, 1.0), r1, epsilon = 1e-14);
        assert_relative_eq!(
            slerp(&r0, &r1, 0.5),
            exp(&Vector3::new(0.0, 0.0, 0.4)),
            epsilon = 1e-14
        );
    }

    #[test]
    fn log_inverts_exp_from_tiny_to_near_pi() {
        let dir = Vector3::new(0.48, -0.6, 0.64);
        for angle in [1e-9, 3e-6, 1e-4, 0.3, 2.0, 3.0, 3.14] {
            let phi = dir * angle;
            let back = log(&exp(&phi));
            assert_relative_eq!(back, phi, max_relative = 1e-9, epsilon = 1e-15);
        }
        assert_eq!(log(&Matrix3::<f64>::identity()), Vector3::zeros());
    }
}
