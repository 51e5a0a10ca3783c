//! First-order propagation of image-point noise to the rows of `B`.
//!
//! For pair `α` with observations `a`, `b` and row `s ∈ {0,1,2}` of its
//! triplet, the Jacobian of `b_α^(s)` with respect to `(u_a, u_b)` factors as
//!
//! ```text
//! J^(s) = J4^(s) · blockdiag(J3 J2 J1)_a,b
//! ```
//!
//! where `J1` maps pixels to normalized coordinates, `J2` rotates into the
//! reference frame, `J3` renormalizes to unit third component and `J4` is the
//! derivative of the depth elimination with respect to the two free ray
//! components. Covariances are stored σ-free as factors `F_s = J^(s) L` with
//! `L Lᵀ = V0[u_a] ⊕ V0[u_b]`, so that `V0^(st)[b_α] = F_s F_tᵀ`.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix2x3, Matrix3, Matrix3x2, SymmetricEigen};

use crate::error::{Error, Result};
use crate::geometry::{ray, Observation, RigCalibration};
use crate::scalar::Scalar;
use crate::system::ReducedSystem;

/// Normalized 2×2 pixel covariances, identity unless overridden.
#[derive(Clone, Debug, PartialEq)]
pub struct PointNoiseModel<T: Scalar> {
    default: Matrix2<T>,
    per_observation: HashMap<usize, Matrix2<T>>,
    /// Noise level in pixels, if known.
    pub sigma: Option<T>,
}

impl<T: Scalar> Default for PointNoiseModel<T> {
    fn default() -> Self {
        Self::identity()
    }
}

fn check_psd<T: Scalar>(m: &Matrix2<T>) -> Result<()> {
    let tol = T::default_epsilon().sqrt() * (m.norm() + T::one());
    if (m - m.transpose()).norm() > tol {
        return Err(Error::invalid("point covariance must be symmetric"));
    }
    let eig = SymmetricEigen::new(*m);
    if eig.eigenvalues.iter().any(|&l| l < -tol) {
        return Err(Error::invalid("point covariance must be positive semi-definite"));
    }
    Ok(())
}

impl<T: Scalar> PointNoiseModel<T> {
    pub fn identity() -> Self {
        Self::uniform_unchecked(Matrix2::identity())
    }

    fn uniform_unchecked(default: Matrix2<T>) -> Self {
        Self {
            default,
            per_observation: HashMap::new(),
            sigma: None,
        }
    }

    pub fn uniform(v0_u: Matrix2<T>) -> Result<Self> {
        check_psd(&v0_u)?;
        Ok(Self::uniform_unchecked(v0_u))
    }

    /// Overrides the covariance of one observation (index into the
    /// correspondence set).
    pub fn with_observation(mut self, observation: usize, v0_u: Matrix2<T>) -> Result<Self> {
        check_psd(&v0_u)?;
        self.per_observation.insert(observation, v0_u);
        Ok(self)
    }

    /// Every covariance multiplied by `c ≥ 0`.
    pub fn scaled(&self, c: T) -> Self {
        let c = c.max(T::zero());
        Self {
            default: self.default * c,
            per_observation: self.per_observation.iter().map(|(&k, v)| (k, v * c)).collect(),
            sigma: self.sigma,
        }
    }

    pub fn covariance(&self, observation: usize) -> Matrix2<T> {
        *self.per_observation.get(&observation).unwrap_or(&self.default)
    }

    /// A square root `L` with `L Lᵀ = V0[u]`.
    pub fn factor(&self, observation: usize) -> Matrix2<T> {
        let v = self.covariance(observation);
        let eig = SymmetricEigen::new(v);
        let mut l = eig.eigenvectors;
        for k in 0..2 {
            let s = eig.eigenvalues[k].max(T::zero()).sqrt();
            l.column_mut(k).scale_mut(s);
        }
        l
    }
}

/// Per-observation factors of `∂p₁₂/∂u₁₂`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RayJacobian<T: Scalar> {
    /// Pixel to normalized coordinates: top-left block of `K⁻¹`.
    pub j1: Matrix2<T>,
    /// First two columns of `R̃ = R_i R_c`.
    pub j2: Matrix3x2<T>,
    /// Renormalization `(1/p̃_z) [I₂ | −p₁₂]`.
    pub j3: Matrix2x3<T>,
}

impl<T: Scalar> RayJacobian<T> {
    /// `∂p₁₂/∂u₁₂ = J3 J2 J1`.
    pub fn composite(&self) -> Matrix2<T> {
        self.j3 * self.j2 * self.j1
    }
}

pub fn jacobian_ray<T: Scalar>(
    obs: &Observation<T>,
    calib: &RigCalibration<T>,
    r_i0: &Matrix3<T>,
) -> Result<RayJacobian<T>> {
    let cam = calib.camera(obs.cam_id)?;
    let r = ray(obs, calib, r_i0)?;
    Ok(ray_jacobian_from_parts(&cam.k_inv_top(), &r.r_tilde, &r.p, r.p_tilde.z))
}

pub(crate) fn ray_jacobian_from_parts<T: Scalar>(
    k_inv_top: &Matrix2<T>,
    r_tilde: &Matrix3<T>,
    p: &nalgebra::Vector3<T>,
    p_tilde_z: T,
) -> RayJacobian<T> {
    let inv = T::one() / p_tilde_z;
    let j3 = Matrix2x3::new(inv, T::zero(), -p.x * inv, T::zero(), inv, -p.y * inv);
    RayJacobian {
        j1: *k_inv_top,
        j2: r_tilde.fixed_view::<3, 2>(0, 0).into_owned(),
        j3,
    }
}

/// Free component of one of the two rays of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RayComponent {
    FirstX,
    FirstY,
    SecondX,
    SecondY,
}

impl RayComponent {
    pub const ALL: [RayComponent; 4] = [
        RayComponent::FirstX,
        RayComponent::FirstY,
        RayComponent::SecondX,
        RayComponent::SecondY,
    ];

    fn parts(self) -> (bool, usize) {
        match self {
            RayComponent::FirstX => (false, 0),
            RayComponent::FirstY => (false, 1),
            RayComponent::SecondX => (true, 0),
            RayComponent::SecondY => (true, 1),
        }
    }
}

/// `∂B/∂p_{c}` restricted to the rows of pair `alpha`, for a component of
/// depth column `column`. Rows are the triplet `s = 0,1,2`.
///
/// With `Q = (PᵀP)⁻¹PᵀS`, `H = P(PᵀP)⁻¹` and `Ṗ = ∂P/∂p_c`:
/// `∂(GS) = ṖQ + H(ṖᵀB − PᵀṖQ)` and `∂B = −∂(GS)`. `Ṗ` has one ±1 entry per
/// pair that uses the column, so only those rows are touched.
pub(crate) fn d_pair_rows<T: Scalar>(
    reduced: &ReducedSystem<T>,
    alpha: usize,
    column: usize,
    comp: usize,
) -> DMatrix<T> {
    let full = reduced.full();
    let n = full.n_cols();
    let (blk, row_l) = full.pair_slot(alpha);
    let (cblk, col_l) = full.column_slot(column);
    let mut out = DMatrix::zeros(3, n);
    if blk != cblk {
        return out;
    }
    let f = &reduced.factors()[blk];
    let m = f.p.ncols();
    let q_row = f.q.row(col_l);

    // r = Σ_β sign_β B[3β + c, :] and w_j = Σ_β sign_β P[3β + c, j].
    let mut r = DVector::zeros(n);
    let mut w = DVector::zeros(m);
    let mut own_sign = None;
    for &(beta, sign) in &full.columns()[column].pairs {
        let (_, lb) = full.pair_slot(beta);
        let sg: T = if sign > 0 { T::one() } else { -T::one() };
        let row = 3 * lb + comp;
        r += f.b.row(row).transpose() * sg;
        w += f.p.row(row).transpose() * sg;
        if beta == alpha {
            own_sign = Some(sg);
        }
    }

    let h_alpha = f.h.rows(3 * row_l, 3);
    let h_col = h_alpha.column(col_l);
    let hw = h_alpha * &w;
    for s in 0..3 {
        for c in 0..n {
            out[(s, c)] = -(h_col[s] * r[c] - hw[s] * q_row[c]);
        }
    }
    if let Some(sg) = own_sign {
        for c in 0..n {
            out[(comp, c)] -= sg * q_row[c];
        }
    }
    out
}

/// Derivative of the rows of pair `alpha` with respect to one free ray
/// component of that pair.
pub fn jacobian_schur<T: Scalar>(reduced: &ReducedSystem<T>, alpha: usize, component: RayComponent) -> DMatrix<T> {
    assert!(alpha < reduced.n_pairs(), "pair index out of range");
    let pair = &reduced.full().pairs()[alpha];
    let (second, comp) = component.parts();
    let column = if second { pair.b } else { pair.a };
    d_pair_rows(reduced, alpha, column, comp)
}

/// Full Jacobians `J^(s)` (`n × 4`, columns `u_a,x  u_a,y  u_b,x  u_b,y`) of
/// the three rows of pair `alpha`.
pub fn full_jacobian<T: Scalar>(reduced: &ReducedSystem<T>, alpha: usize) -> [DMatrix<T>; 3] {
    let full = reduced.full();
    let n = full.n_cols();
    let pair = &full.pairs()[alpha];
    let mut j = [DMatrix::zeros(n, 4), DMatrix::zeros(n, 4), DMatrix::zeros(n, 4)];
    for (side, column) in [pair.a, pair.b].into_iter().enumerate() {
        let col = &full.columns()[column];
        let rj = ray_jacobian_from_parts(&col.k_inv_top, &col.ray.r_tilde, &col.ray.p, col.ray.p_tilde.z);
        let dp_du = rj.composite();
        let dx = d_pair_rows(reduced, alpha, column, 0);
        let dy = d_pair_rows(reduced, alpha, column, 1);
        for (s, js) in j.iter_mut().enumerate() {
            for k in 0..2 {
                let mut v = dx.row(s).transpose() * dp_du[(0, k)];
                v += dy.row(s).transpose() * dp_du[(1, k)];
                js.column_mut(2 * side + k).copy_from(&v);
            }
        }
    }
    j
}

/// σ-free covariance factors of every pair.
#[derive(Clone, Debug)]
pub struct RowCovariances<T: Scalar> {
    factors: Vec<[DMatrix<T>; 3]>,
    noise: PointNoiseModel<T>,
}

/// Factors `F_s` of one pair: `V0^(st) = F_s F_tᵀ`.
pub fn propagate<T: Scalar>(reduced: &ReducedSystem<T>, noise: &PointNoiseModel<T>, alpha: usize) -> [DMatrix<T>; 3] {
    let full = reduced.full();
    let pair = &full.pairs()[alpha];
    let la = noise.factor(full.columns()[pair.a].observation);
    let lb = noise.factor(full.columns()[pair.b].observation);
    let mut l = DMatrix::zeros(4, 4);
    l.view_mut((0, 0), (2, 2)).copy_from(&la);
    l.view_mut((2, 2), (2, 2)).copy_from(&lb);
    let j = full_jacobian(reduced, alpha);
    [&j[0] * &l, &j[1] * &l, &j[2] * &l]
}

pub fn propagate_all<T: Scalar>(reduced: &ReducedSystem<T>, noise: &PointNoiseModel<T>) -> RowCovariances<T> {
    RowCovariances {
        factors: (0..reduced.n_pairs()).map(|a| propagate(reduced, noise, a)).collect(),
        noise: noise.clone(),
    }
}

impl<T: Scalar> RowCovariances<T> {
    pub fn n_pairs(&self) -> usize {
        self.factors.len()
    }

    /// The point noise model the factors were propagated from.
    pub fn noise(&self) -> &PointNoiseModel<T> {
        &self.noise
    }

    pub fn factors(&self, alpha: usize) -> &[DMatrix<T>; 3] {
        &self.factors[alpha]
    }

    /// `V0^(st)[b_α]`.
    pub fn block(&self, alpha: usize, s: usize, t: usize) -> DMatrix<T> {
        let f = &self.factors[alpha];
        &f[s] * f[t].transpose()
    }

    /// `(yᵀ V0^(st) y)_{st}`, the matrix whose pseudoinverse gives the weights.
    pub fn projected(&self, alpha: usize, y: &DVector<T>) -> Matrix3<T> {
        let f = &self.factors[alpha];
        let phi: [DVector<T>; 3] = [f[0].tr_mul(y), f[1].tr_mul(y), f[2].tr_mul(y)];
        Matrix3::from_fn(|s, t| phi[s].dot(&phi[t]))
    }

    /// `Σ_st w_st V0^(st)[b_α]`.
    pub fn weighted(&self, alpha: usize, w: &Matrix3<T>) -> DMatrix<T> {
        let f = &self.factors[alpha];
        let n = f[0].nrows();
        let mut out = DMatrix::zeros(n, n);
        for s in 0..3 {
            let mut g = DMatrix::zeros(n, f[0].ncols());
            for t in 0..3 {
                if w[(s, t)] != T::zero() {
                    g += &f[t] * w[(s, t)];
                }
            }
            out += &f[s] * g.transpose();
        }
        out
    }

    /// Scales every covariance by `c` (factors by `√c`).
    pub fn scaled(&self, c: T) -> Self {
        let r = c.max(T::zero()).sqrt();
        Self {
            factors: self
                .factors
                .iter()
                .map(|f| [&f[0] * r, &f[1] * r, &f[2] * r])
                .collect(),
            noise: self.noise.scaled(c),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{CameraCalibration, SceneGeometry, Shutter};
    use crate::so3;
    use crate::system::tests::{random_world, world_system, World};
    use crate::system::{assemble, reduce, AssemblyOptions, CorrespondenceSet, PairingMode};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn rebuild(w: &World, set: &CorrespondenceSet<f64>) -> ReducedSystem<f64> {
        let geom = SceneGeometry::new(&w.calib, &w.kin, Shutter::Rolling);
        reduce(assemble(set, &geom, &AssemblyOptions::default()).unwrap()).unwrap()
    }

    fn rel_err(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    /// `b_α` rows after moving one pixel coordinate of one observation.
    fn rows_with(w: &World, set: &CorrespondenceSet<f64>, alpha: usize, obs: usize, k: usize, delta: f64) -> DMatrix<f64> {
        let mut s2 = set.clone();
        s2.observations_mut()[obs].obs.u[k] += delta;
        rebuild(w, &s2).b().rows(3 * alpha, 3).into_owned()
    }

    #[test]
    fn ray_jacobian_trivial_cases() {
        let k1 = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        let cam = CameraCalibration::new(k1, Matrix3::identity(), Vector3::zeros()).unwrap();
        let calib = RigCalibration::new(vec![cam], 1e-4, 480, 10.0).unwrap();
        let obs = Observation::new(0, 0, 0, 0.0, 0.0);
        let j = jacobian_ray(&obs, &calib, &Matrix3::identity()).unwrap();
        assert_relative_eq!(j.composite(), Matrix2::identity(), epsilon = 1e-15);

        let k500 = Matrix3::new(500.0, 0.0, 320.0, 0.0, 500.0, 240.0, 0.0, 0.0, 1.0);
        let cam = CameraCalibration::new(k500, Matrix3::identity(), Vector3::zeros()).unwrap();
        let calib = RigCalibration::new(vec![cam], 1e-4, 480, 10.0).unwrap();
        let obs = Observation::new(0, 0, 0, 320.0, 240.0);
        let j = jacobian_ray(&obs, &calib, &Matrix3::identity()).unwrap();
        assert_relative_eq!(j.composite(), Matrix2::identity() / 500.0, epsilon = 1e-15);
    }

    #[test]
    fn ray_jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let k = Matrix3::new(460.0, 0.0, 320.0, 0.0, 455.0, 240.0, 0.0, 0.0, 1.0);
        let rc = so3::exp(&Vector3::new(0.05, -0.1, 0.02));
        let cam = CameraCalibration::new(k, rc, Vector3::zeros()).unwrap();
        let calib = RigCalibration::new(vec![cam], 1e-4, 480, 10.0).unwrap();
        let h = 1e-6;
        for _ in 0..50 {
            let obs = Observation::new(0, 0, 0, rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let r = so3::exp(&Vector3::new(rng.random_range(-0.4..0.4), rng.random_range(-0.4..0.4), rng.random_range(-3.0..3.0)));
            let j = jacobian_ray(&obs, &calib, &r).unwrap().composite();
            let mut fd = Matrix2::zeros();
            for c in 0..2 {
                let (mut op, mut om) = (obs, obs);
                op.u[c] += h;
                om.u[c] -= h;
                let d = (crate::geometry::calibrated_ray(&op, &calib, &r).unwrap()
                    - crate::geometry::calibrated_ray(&om, &calib, &r).unwrap())
                    / (2.0 * h);
                fd[(0, c)] = d.x;
                fd[(1, c)] = d.y;
            }
            assert!((j - fd).norm() < 1e-6 * j.norm());
        }
    }

    #[test]
    fn schur_jacobian_matches_rebuild() {
        let w = random_world(22, 5, 2);
        let (set, full) = world_system(&w, PairingMode::StereoDense);
        let reduced = reduce(full).unwrap();
        let h = 1e-6;
        for alpha in [0usize, 3, 9, 14] {
            let j = full_jacobian(&reduced, alpha);
            let pair = reduced.full().pairs()[alpha];
            let obs = [
                reduced.full().columns()[pair.a].observation,
                reduced.full().columns()[pair.b].observation,
            ];
            for (side, &o) in obs.iter().enumerate() {
                for k in 0..2 {
                    let fd = (rows_with(&w, &set, alpha, o, k, h) - rows_with(&w, &set, alpha, o, k, -h)) / (2.0 * h);
                    let mut analytic = DMatrix::zeros(3, 7);
                    for s in 0..3 {
                        analytic.set_row(s, &j[s].column(2 * side + k).transpose());
                    }
                    assert!(rel_err(&analytic, &fd) < 1e-5, "pair {alpha} side {side} comp {k}: {}", rel_err(&analytic, &fd));
                }
            }
        }
    }

    /// Dense reference: derivative of `G S` with respect to all three
    /// components of each ray, chained through `∂p/∂p̃` and `∂p̃/∂u`.
    fn reference_jacobian(reduced: &ReducedSystem<f64>, alpha: usize) -> [DMatrix<f64>; 3] {
        let full = reduced.full();
        let p = full.p_dense();
        let s = full.s();
        let ptp_inv = (p.transpose() * &p).try_inverse().unwrap();
        let pair = full.pairs()[alpha];
        let mut j = [DMatrix::zeros(7, 4), DMatrix::zeros(7, 4), DMatrix::zeros(7, 4)];
        for (side, column) in [pair.a, pair.b].into_iter().enumerate() {
            let col = &full.columns()[column];
            // ∂p/∂p̃ = (1/p̃_z)(I − p e₃ᵀ), ∂p̃/∂u = R̃ K⁻¹[:, 0:2].
            let dp_dpt = (Matrix3::identity() - col.ray.p * Vector3::z().transpose()) / col.ray.p_tilde.z;
            let mut kinv = Matrix3x2::zeros();
            kinv.fixed_view_mut::<2, 2>(0, 0).copy_from(&col.k_inv_top);
            let dp_du = dp_dpt * col.ray.r_tilde * kinv;
            for comp in 0..3 {
                let mut dp = DMatrix::zeros(p.nrows(), p.ncols());
                for &(beta, sign) in &col.pairs {
                    dp[(3 * beta + comp, column)] = sign as f64;
                }
                let d_pinv = -&ptp_inv * (dp.transpose() * &p + p.transpose() * &dp) * &ptp_inv * p.transpose()
                    + &ptp_inv * dp.transpose();
                let dg = &dp * &ptp_inv * p.transpose() + &p * d_pinv;
                let db = -(dg * s);
                for sr in 0..3 {
                    for k in 0..2 {
                        let v = db.row(3 * alpha + sr).transpose() * dp_du[(comp, k)];
                        let mut c = j[sr].column_mut(2 * side + k);
                        c += v;
                    }
                }
            }
        }
        j
    }

    #[test]
    fn four_column_matches_six_column_reference() {
        let w = random_world(23, 5, 3);
        let (_, full) = world_system(&w, PairingMode::StereoDense);
        let reduced = reduce(full).unwrap();
        for alpha in 0..reduced.n_pairs() {
            let a = full_jacobian(&reduced, alpha);
            let b = reference_jacobian(&reduced, alpha);
            for s in 0..3 {
                assert!(rel_err(&a[s], &b[s]) < 1e-9);
            }
        }
    }

    #[test]
    fn unrelated_component_gives_zero_rows() {
        let w = random_world(24, 5, 3);
        let (_, full) = world_system(&w, PairingMode::StereoDense);
        let reduced = reduce(full).unwrap();
        let f = reduced.full();
        let alpha = 0;
        let other = f
            .columns()
            .iter()
            .position(|c| c.track != f.columns()[f.pairs()[alpha].a].track)
            .unwrap();
        assert_eq!(d_pair_rows(&reduced, alpha, other, 0).norm(), 0.0);
        // A column used by T pairs touches exactly T entries of ∂P.
        let col = &f.columns()[f.pairs()[alpha].a];
        assert_eq!(col.pairs.len(), 4);
    }

    #[test]
    fn covariance_properties() {
        let w = random_world(25, 5, 3);
        let (set, full) = world_system(&w, PairingMode::StereoDense);
        let reduced = reduce(full).unwrap();
        let zero = PointNoiseModel::uniform(Matrix2::zeros()).unwrap();
        let cz = propagate_all(&reduced, &zero);
        for a in 0..cz.n_pairs() {
            for s in 0..3 {
                for t in 0..3 {
                    assert_eq!(cz.block(a, s, t).norm(), 0.0);
                }
            }
        }
        let aniso = Matrix2::new(2.0, 0.3, 0.3, 0.5);
        let mut model = PointNoiseModel::identity();
        for (k, _) in set.observations().iter().enumerate().step_by(3) {
            model = model.with_observation(k, aniso).unwrap();
        }
        let c1 = propagate_all(&reduced, &model);
        let c3 = propagate_all(&reduced, &PointNoiseModel::uniform(aniso * 3.0).unwrap());
        let c1u = propagate_all(&reduced, &PointNoiseModel::uniform(aniso).unwrap());
        for a in 0..c1.n_pairs() {
            for s in 0..3 {
                let vss = c1.block(a, s, s);
                assert!((&vss - vss.transpose()).norm() <= 1e-12 * vss.norm());
                assert!(crate::linalg::sym_eigen_sorted(&vss).0.min() > -1e-12 * vss.norm());
                for t in 0..3 {
                    assert!((c1.block(a, s, t) - c1.block(a, t, s).transpose()).norm() <= 1e-12 * vss.norm().max(1e-30));
                    assert!(rel_err(&c3.block(a, s, t), &(c1u.block(a, s, t) * 3.0)) < 1e-12);
                }
            }
        }
        assert!(PointNoiseModel::uniform(Matrix2::new(1.0, 0.0, 0.0, -1.0)).is_err());
    }

    #[test]
    fn monte_carlo_row_covariance() {
        let w = random_world(26, 5, 1);
        let (set, full) = world_system(&w, PairingMode::StereoDense);
        let reduced = reduce(full).unwrap();
        let cov = propagate_all(&reduced, &PointNoiseModel::identity());
        let alpha = 4;
        let pair = reduced.full().pairs()[alpha];
        let oa = reduced.full().columns()[pair.a].observation;
        let ob = reduced.full().columns()[pair.b].observation;
        let sigma = 0.1;
        let base: DVector<f64> = {
            let r = reduced.b().rows(3 * alpha, 3);
            DVector::from_iterator(21, (0..3).flat_map(|s| (0..7).map(move |c| r[(s, c)])))
        };
        let mut rng = ChaCha8Rng::seed_from_u64(27);
        let draws = 100_000;
        let mut acc = DMatrix::<f64>::zeros(21, 21);
        let mut mean = DVector::<f64>::zeros(21);
        let mut s2 = set.clone();
        let geom = SceneGeometry::new(&w.calib, &w.kin, Shutter::Rolling);
        for _ in 0..draws {
            for &o in &[oa, ob] {
                let u = set.observations()[o].obs.u;
                let nx: f64 = StandardNormal.sample(&mut rng);
                let ny: f64 = StandardNormal.sample(&mut rng);
                s2.observations_mut()[o].obs.u = Vector3::new(u.x + sigma * nx, u.y + sigma * ny, 1.0);
            }
            let r = reduce(assemble(&s2, &geom, &AssemblyOptions::default()).unwrap()).unwrap();
            let rows = r.b().rows(3 * alpha, 3);
            let d = DVector::from_iterator(21, (0..3).flat_map(|s| (0..7).map(move |c| rows[(s, c)]))) - &base;
            mean += &d;
            acc += &d * d.transpose();
        }
        mean /= draws as f64;
        let empirical = acc / draws as f64 - &mean * mean.transpose();
        let mut predicted = DMatrix::zeros(21, 21);
        for s in 0..3 {
            for t in 0..3 {
                predicted
                    .view_mut((7 * s, 7 * t), (7, 7))
                    .copy_from(&(cov.block(alpha, s, t) * (sigma * sigma)));
            }
        }
        let err = rel_err(&empirical, &predicted);
        assert!(err < 0.05, "Monte-Carlo covariance mismatch {err}");
    }

    #[test]
    fn projected_and_weighted_agree_with_blocks() {
        let w = random_world(28, 5, 2);
        let (_, full) = world_system(&w, PairingMode::StereoDense);
        let reduced = reduce(full).unwrap();
        let cov = propagate_all(&reduced, &PointNoiseModel::identity());
        let y = DVector::from_vec(vec![0.1, -0.3, 0.8, 0.2, 9.7, 0.1, 1.0]);
        let wgt = Matrix3::new(2.0, 0.1, 0.0, 0.1, 1.0, 0.3, 0.0, 0.3, 0.5);
        for a in 0..cov.n_pairs() {
            let v = cov.projected(a, &y);
            let mut n = DMatrix::zeros(7, 7);
            for s in 0..3 {
                for t in 0..3 {
                    let b = cov.block(a, s, t);
                    assert_relative_eq!(v[(s, t)], (y.transpose() * &b * &y)[0], max_relative = 1e-10);
                    n += b * wgt[(s, t)];
                }
            }
            assert!(rel_err(&cov.weighted(a, &wgt), &n) < 1e-12);
        }
    }
}
