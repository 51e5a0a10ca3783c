//! Bundle adjustment over velocity, gravity and the 3D points.
//!
//! Minimizes the summed squared reprojection error with Levenberg–Marquardt.
//! Each observation is projected through the exact pose of its own scanline,
//! and the points are eliminated with a Schur complement at every step.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, Matrix6x3, Vector2, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimators::{InitEstimate, Method};
use crate::geometry::{Observation, SceneGeometry};
use crate::linalg::pinv_sym_rank;
use crate::scalar::{from_usize, lit, Scalar};
use crate::system::{FullSystem, ParamLayout, ReducedSystem};

/// One observation with everything the projection needs that does not depend
/// on the unknowns.
#[derive(Clone, Debug)]
pub struct BaObservation<T: Scalar> {
    /// Index into the correspondence set.
    pub observation: usize,
    /// Index into the problem's points.
    pub point: usize,
    pub u: Vector2<T>,
    /// Camera-to-world rotation `R_i R_c`.
    rotation: Matrix3<T>,
    /// `d_i + R_i t_c`: camera center without the `v0`/`g0` terms.
    offset: Vector3<T>,
    /// `(i Δτ, i² Δτ²/2)`.
    coef: (T, T),
    k: Matrix3<T>,
}

#[derive(Clone, Debug)]
pub struct BaProblem<T: Scalar> {
    pub v0: Vector3<T>,
    pub g0: Vector3<T>,
    pub points: Vec<Vector3<T>>,
    /// Track id of every point.
    pub point_tracks: Vec<usize>,
    observations: Vec<BaObservation<T>>,
    /// Observation indices per point.
    by_point: Vec<Vec<usize>>,
    /// Current LM damping.
    pub damping: T,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmOptions<T: Scalar> {
    pub initial_damping: T,
    pub damping_cap: T,
    pub max_iter: usize,
    /// Stop when an accepted step changes the cost by less than this fraction.
    pub rel_tol: T,
}

impl<T: Scalar> Default for LmOptions<T> {
    fn default() -> Self {
        Self {
            initial_damping: lit(1e-4),
            damping_cap: lit(1e8),
            max_iter: 50,
            rel_tol: lit(1e-10),
        }
    }
}

/// One LM step attempt.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LmIterate<T: Scalar> {
    pub iteration: usize,
    pub cost: T,
    pub damping: T,
    pub accepted: bool,
}

#[derive(Clone, Debug)]
pub struct BaOutcome<T: Scalar> {
    pub estimate: InitEstimate<T>,
    pub points: Vec<Vector3<T>>,
    /// Cost before the first step.
    pub initial_cost: T,
    pub trace: Vec<LmIterate<T>>,
}

/// Camera-frame point and the pixel it projects to.
fn project<T: Scalar>(o: &BaObservation<T>, x: &Vector3<T>, v0: &Vector3<T>, g0: &Vector3<T>) -> Option<(Vector3<T>, Vector2<T>)> {
    let center = v0 * o.coef.0 + g0 * o.coef.1 + o.offset;
    let xc = o.rotation.tr_mul(&(x - center));
    if !(xc.z > T::zero()) {
        return None;
    }
    let h = o.k * (xc / xc.z);
    Some((xc, Vector2::new(h.x, h.y)))
}

/// `∂û/∂x_c` for a camera-frame point.
fn projection_jacobian<T: Scalar>(k: &Matrix3<T>, xc: &Vector3<T>) -> Matrix2x3<T> {
    let iz = T::one() / xc.z;
    let d = Matrix3::new(
        iz,
        T::zero(),
        -xc.x * iz * iz,
        T::zero(),
        iz,
        -xc.y * iz * iz,
        T::zero(),
        T::zero(),
        T::zero(),
    );
    (k * d).fixed_view::<2, 3>(0, 0).into_owned()
}

/// Predicted pixel of `x` seen in `obs` under the motion `(v0, g0)`.
pub fn reproject<T: Scalar>(
    x: &Vector3<T>,
    v0: &Vector3<T>,
    g0: &Vector3<T>,
    obs: &Observation<T>,
    geom: &SceneGeometry<'_, T>,
) -> Result<Vector2<T>> {
    let o = ba_observation(usize::MAX, 0, obs, geom)?;
    project(&o, x, v0, g0)
        .map(|(_, u)| u)
        .ok_or(Error::Cheirality { observation: usize::MAX })
}

/// Jacobians of the reprojection of `obs` with respect to `[v0; g0]` and the
/// point.
pub fn reprojection_jacobians<T: Scalar>(
    x: &Vector3<T>,
    v0: &Vector3<T>,
    g0: &Vector3<T>,
    obs: &Observation<T>,
    geom: &SceneGeometry<'_, T>,
) -> Result<(nalgebra::Matrix2x6<T>, nalgebra::Matrix2x3<T>)> {
    let o = ba_observation(usize::MAX, 0, obs, geom)?;
    let (xc, _) = project(&o, x, v0, g0).ok_or(Error::Cheirality { observation: usize::MAX })?;
    Ok(jacobians(&o, &xc))
}

fn jacobians<T: Scalar>(o: &BaObservation<T>, xc: &Vector3<T>) -> (nalgebra::Matrix2x6<T>, Matrix2x3<T>) {
    let jp = projection_jacobian(&o.k, xc);
    let jx = jp * o.rotation.transpose();
    let mut ja = nalgebra::Matrix2x6::zeros();
    ja.fixed_view_mut::<2, 3>(0, 0).copy_from(&(jx * -o.coef.0));
    ja.fixed_view_mut::<2, 3>(0, 3).copy_from(&(jx * -o.coef.1));
    (ja, jx)
}

fn ba_observation<T: Scalar>(
    observation: usize,
    point: usize,
    obs: &Observation<T>,
    geom: &SceneGeometry<'_, T>,
) -> Result<BaObservation<T>> {
    let cam = geom.calib.camera(obs.cam_id)?;
    let i = geom.scanline(obs);
    let kin = geom.kinematics;
    let r = kin.rotation(i)?;
    Ok(BaObservation {
        observation,
        point,
        u: Vector2::new(obs.u.x, obs.u.y),
        rotation: r * cam.r_cam_imu,
        offset: kin.accel_displacement(i)? + r * cam.t_cam_imu,
        coef: kin.motion_coefficients(i),
        k: cam.k,
    })
}

/// Initial points from a solved linear system: every pair reconstructs its
/// two endpoints along their rays, and the reconstructions of a track are
/// averaged. Returns `(track, point)` sorted by track.
pub fn init_points<T: Scalar>(
    reduced: &ReducedSystem<T>,
    geom: &SceneGeometry<'_, T>,
    y: &DVector<T>,
) -> Result<Vec<(usize, Vector3<T>)>> {
    let full = reduced.full();
    let depths = reduced.recover_depths(y)?;
    let y = y / y[y.len() - 1];
    let v0 = Vector3::new(y[0], y[1], y[2]);
    let g0 = Vector3::new(y[3], y[4], y[5]);
    let mut sums: BTreeMap<usize, (Vector3<T>, usize)> = BTreeMap::new();
    let reconstruct = |c: usize| {
        let col = &full.columns()[c];
        let (t, mu) = geom.kinematics.motion_coefficients(col.scanline);
        col.ray.p * depths.lambda[c] + v0 * t + g0 * mu + col.center_offset
    };
    for pair in full.pairs() {
        for c in [pair.a, pair.b] {
            let x = reconstruct(c);
            if x.iter().all(|v| v.is_finite()) {
                let e = sums.entry(full.columns()[c].track).or_insert((Vector3::zeros(), 0));
                e.0 += x;
                e.1 += 1;
            }
        }
    }
    for c in full.columns() {
        if !sums.contains_key(&c.track) {
            return Err(Error::DegenerateTrack {
                observation: c.observation,
            });
        }
    }
    Ok(sums
        .into_iter()
        .map(|(t, (s, n))| (t, s / from_usize::<T>(n)))
        .collect())
}

impl<T: Scalar> BaProblem<T> {
    /// Problem over the observations used by `full`, started from `init` and
    /// the given per-track points.
    pub fn new(
        full: &FullSystem<T>,
        set_observations: &[crate::system::TrackedObservation<T>],
        geom: &SceneGeometry<'_, T>,
        init: &InitEstimate<T>,
        points: &[(usize, Vector3<T>)],
    ) -> Result<Self> {
        let index: BTreeMap<usize, usize> = points.iter().enumerate().map(|(k, (t, _))| (*t, k)).collect();
        let mut observations = Vec::with_capacity(full.n_depths());
        let mut by_point = vec![Vec::new(); points.len()];
        for col in full.columns() {
            let &p = index.get(&col.track).ok_or(Error::DegenerateTrack {
                observation: col.observation,
            })?;
            let obs = &set_observations[col.observation].obs;
            by_point[p].push(observations.len());
            observations.push(ba_observation(col.observation, p, obs, geom)?);
        }
        if let Some(k) = by_point.iter().position(|v| v.len() < 2) {
            return Err(Error::invalid(format!("track {} has fewer than 2 observations", points[k].0)));
        }
        let unknowns = 6 + 3 * points.len();
        if 2 * observations.len() < unknowns {
            return Err(Error::invalid(format!(
                "{} reprojection residuals cannot fix {unknowns} unknowns",
                2 * observations.len()
            )));
        }
        Ok(Self {
            v0: init.v0,
            g0: init.g0,
            points: points.iter().map(|(_, x)| *x).collect(),
            point_tracks: points.iter().map(|(t, _)| *t).collect(),
            observations,
            by_point,
            damping: lit(1e-4),
        })
    }

    /// Builds the problem from a linear solution, initializing the points from
    /// its depths.
    pub fn from_linear(
        reduced: &ReducedSystem<T>,
        set_observations: &[crate::system::TrackedObservation<T>],
        geom: &SceneGeometry<'_, T>,
        init: &InitEstimate<T>,
    ) -> Result<Self> {
        if init.layout != ParamLayout::default() {
            log::debug!("bias terms of the initializer are ignored by bundle adjustment");
        }
        let points = init_points(reduced, geom, &init.y)?;
        Self::new(reduced.full(), set_observations, geom, init, &points)
    }

    pub fn n_observations(&self) -> usize {
        self.observations.len()
    }

    pub fn observations(&self) -> &[BaObservation<T>] {
        &self.observations
    }

    /// Sum of squared reprojection errors (px²), or `None` if a point falls
    /// behind a camera.
    pub fn cost_at(&self, v0: &Vector3<T>, g0: &Vector3<T>, points: &[Vector3<T>]) -> Option<T> {
        let parts: Vec<Option<T>> = self
            .by_point
            .par_iter()
            .enumerate()
            .map(|(p, obs)| {
                let mut c = T::zero();
                for &k in obs {
                    let o = &self.observations[k];
                    let (_, u) = project(o, &points[p], v0, g0)?;
                    c += (u - o.u).norm_squared();
                }
                Some(c)
            })
            .collect();
        parts.into_iter().try_fold(T::zero(), |acc, c| c.map(|c| acc + c))
    }

    pub fn cost(&self) -> Option<T> {
        self.cost_at(&self.v0, &self.g0, &self.points)
    }

    /// Residuals `û − u` stacked per observation.
    pub fn residuals(&self) -> Result<DVector<T>> {
        let mut r = DVector::zeros(2 * self.observations.len());
        for (k, o) in self.observations.iter().enumerate() {
            let (_, u) = project(o, &self.points[o.point], &self.v0, &self.g0)
                .ok_or(Error::Cheirality { observation: o.observation })?;
            r[2 * k] = u.x - o.u.x;
            r[2 * k + 1] = u.y - o.u.y;
        }
        Ok(r)
    }

    /// Dense Jacobian of [`Self::residuals`] with columns `[v0; g0; X_0; X_1; …]`.
    pub fn jacobian(&self) -> Result<DMatrix<T>> {
        let n = 6 + 3 * self.points.len();
        let mut j = DMatrix::zeros(2 * self.observations.len(), n);
        for (k, o) in self.observations.iter().enumerate() {
            let (xc, _) = project(o, &self.points[o.point], &self.v0, &self.g0)
                .ok_or(Error::Cheirality { observation: o.observation })?;
            let (ja, jx) = jacobians(o, &xc);
            j.view_mut((2 * k, 0), (2, 6)).copy_from(&ja);
            j.view_mut((2 * k, 6 + 3 * o.point), (2, 3)).copy_from(&jx);
        }
        Ok(j)
    }

    /// Normal-equation pieces: `U`, `e_a`, and per point `(V, W, e_x)`.
    #[allow(clippy::type_complexity)]
    fn normal_equations(&self) -> Option<(Matrix6<T>, Vector6<T>, Vec<(Matrix3<T>, Matrix6x3<T>, Vector3<T>)>)> {
        let per_point: Vec<Option<_>> = self
            .by_point
            .par_iter()
            .enumerate()
            .map(|(p, obs)| {
                let mut u = Matrix6::zeros();
                let mut ea = Vector6::zeros();
                let mut v = Matrix3::zeros();
                let mut w = Matrix6x3::zeros();
                let mut ex = Vector3::zeros();
                for &k in obs {
                    let o = &self.observations[k];
                    let (xc, pred) = project(o, &self.points[p], &self.v0, &self.g0)?;
                    let r = pred - o.u;
                    let (ja, jx) = jacobians(o, &xc);
                    u += ja.transpose() * ja;
                    ea += ja.transpose() * r;
                    v += jx.transpose() * jx;
                    w += ja.transpose() * jx;
                    ex += jx.transpose() * r;
                }
                Some((u, ea, (v, w, ex)))
            })
            .collect();
        let mut u = Matrix6::zeros();
        let mut ea = Vector6::zeros();
        let mut blocks = Vec::with_capacity(per_point.len());
        for part in per_point {
            let (pu, pe, b) = part?;
            u += pu;
            ea += pe;
            blocks.push(b);
        }
        Some((u, ea, blocks))
    }

    /// Reduced camera system `U − Σ W V⁻¹ Wᵀ` with the diagonals scaled by
    /// `1 + damping`.
    #[allow(clippy::type_complexity)]
    fn reduced_step(
        u: &Matrix6<T>,
        ea: &Vector6<T>,
        blocks: &[(Matrix3<T>, Matrix6x3<T>, Vector3<T>)],
        damping: T,
    ) -> Option<(Vector6<T>, Vec<Vector3<T>>)> {
        let scale = T::one() + damping;
        let mut s = *u;
        for k in 0..6 {
            s[(k, k)] *= scale;
        }
        let mut rhs = -ea;
        let mut vinv = Vec::with_capacity(blocks.len());
        for (v, w, ex) in blocks {
            let mut vd = *v;
            for k in 0..3 {
                vd[(k, k)] *= scale;
            }
            let vi = vd.try_inverse()?;
            s -= w * vi * w.transpose();
            rhs += w * (vi * ex);
            vinv.push(vi);
        }
        let da = s.cholesky()?.solve(&rhs);
        let dx = blocks
            .iter()
            .zip(&vinv)
            .map(|((_, w, ex), vi)| -(vi * (ex + w.transpose() * da)))
            .collect();
        Some((da, dx))
    }

    /// Reduced Hessian of `[v0; g0]` at the current state, undamped.
    pub fn reduced_hessian(&self) -> Result<Matrix6<T>> {
        let (u, _, blocks) = self.normal_equations().ok_or(Error::Cheirality { observation: usize::MAX })?;
        let mut s = u;
        for (v, w, _) in &blocks {
            let vi = v.try_inverse().ok_or(Error::invalid("point block of the Hessian is singular"))?;
            s -= w * vi * w.transpose();
        }
        Ok(s)
    }
}

/// Levenberg–Marquardt refinement starting from the problem's state.
pub fn refine_lm<T: Scalar>(problem: &mut BaProblem<T>, opts: &LmOptions<T>) -> Result<BaOutcome<T>> {
    problem.damping = opts.initial_damping;
    let mut cost = problem
        .cost()
        .ok_or(Error::Cheirality { observation: usize::MAX })?;
    let initial_cost = cost;
    let mut trace = Vec::new();
    let mut converged = false;
    let mut iterations = 0;
    let tiny = T::default_epsilon() * T::default_epsilon();
    // Residuals at rounding level: already at the minimum.
    let zero_cost = T::default_epsilon() * from_usize::<T>(problem.n_observations());
    let mut attempts = 0;
    let mut last_rel = T::one();

    if cost <= zero_cost {
        converged = true;
    }
    while !converged && iterations < opts.max_iter {
        iterations += 1;
        let (u, ea, blocks) = problem
            .normal_equations()
            .ok_or(Error::Cheirality { observation: usize::MAX })?;
        // Try steps with growing damping until one lowers the cost.
        let mut accepted = false;
        while problem.damping <= opts.damping_cap {
            attempts += 1;
            let step = BaProblem::reduced_step(&u, &ea, &blocks, problem.damping);
            let candidate = step.and_then(|(da, dx)| {
                let v0 = problem.v0 + da.fixed_rows::<3>(0);
                let g0 = problem.g0 + da.fixed_rows::<3>(3);
                let pts: Vec<_> = problem.points.iter().zip(&dx).map(|(x, d)| x + d).collect();
                problem.cost_at(&v0, &g0, &pts).map(|c| (c, v0, g0, pts))
            });
            match candidate {
                Some((c, v0, g0, pts)) if c < cost => {
                    let rel = (cost - c) / cost;
                    last_rel = rel;
                    trace.push(LmIterate {
                        iteration: attempts,
                        cost: c,
                        damping: problem.damping,
                        accepted: true,
                    });
                    problem.v0 = v0;
                    problem.g0 = g0;
                    problem.points = pts;
                    cost = c;
                    problem.damping = (problem.damping / lit(10.0)).max(tiny);
                    accepted = true;
                    if rel < opts.rel_tol || cost <= zero_cost {
                        converged = true;
                    }
                    break;
                }
                other => {
                    trace.push(LmIterate {
                        iteration: attempts,
                        cost: other.map(|o| o.0).unwrap_or(T::max_value().unwrap()),
                        damping: problem.damping,
                        accepted: false,
                    });
                    problem.damping *= lit(10.0);
                }
            }
        }
        if !accepted {
            // Rejections at the tail of a converging run are rounding noise.
            // Anywhere else the cap means the iteration is stuck.
            converged = last_rel < opts.rel_tol.sqrt();
            log::debug!("LM reached the damping cap after {iterations} iterations");
            break;
        }
    }
    if !converged {
        log::warn!("bundle adjustment did not converge after {iterations} iterations");
    }

    let params = DVector::from_iterator(6, problem.v0.iter().chain(problem.g0.iter()).copied());
    let mut y = DVector::zeros(7);
    y.rows_mut(0, 6).copy_from(&params);
    y[6] = T::one();
    let y = &y / y.norm();
    let mut est = InitEstimate::from_params(Method::Ba, ParamLayout::default(), params, y);
    est.iterations = iterations;
    est.converged = converged;
    let dof = 2 * problem.observations.len() - 6 - 3 * problem.points.len();
    if dof > 0 {
        let sigma2 = cost / from_usize::<T>(dof);
        est.sigma_hat = Some(sigma2.sqrt());
        if let Ok(h) = problem.reduced_hessian() {
            let hd = DMatrix::from_column_slice(6, 6, h.as_slice());
            let cov = pinv_sym_rank(&hd, 6) * sigma2;
            est.cov = Some(cov.clone());
            est.cov_correlated = Some(cov);
        }
    }
    Ok(BaOutcome {
        estimate: est,
        points: problem.points.clone(),
        initial_cost,
        trace,
    })
}
