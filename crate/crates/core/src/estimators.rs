//! Fitting `B y ≈ 0`: least squares, Taubin, iterative reweight and
//! renormalization.
//!
//! All solvers return the unit vector `y` they selected (sign fixed so that
//! the homogeneous coordinate is positive) together with the dehomogenized
//! parameters `[v0; g0; biases…]`.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_checked, pinv_sym_rank, sym_eigen_sorted};
use crate::noise::{d_pair_rows, ray_jacobian_from_parts, PointNoiseModel, RowCovariances};
use crate::scalar::{from_usize, lit, to_f64, Scalar};
use crate::system::{ParamLayout, ReducedSystem};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ls")]
    Ls,
    #[serde(rename = "iter-reweight")]
    IterReweight,
    #[serde(rename = "taubin")]
    Taubin,
    #[serde(rename = "renorm")]
    Renorm,
    #[serde(rename = "ba")]
    Ba,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Ls, Method::IterReweight, Method::Taubin, Method::Renorm, Method::Ba];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ls => "ls",
            Method::IterReweight => "iter-reweight",
            Method::Taubin => "taubin",
            Method::Renorm => "renorm",
            Method::Ba => "ba",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ls" => Ok(Method::Ls),
            "iter-reweight" | "iterreweight" | "reweight" | "irw" => Ok(Method::IterReweight),
            "taubin" => Ok(Method::Taubin),
            "renorm" | "rnm" => Ok(Method::Renorm),
            "ba" => Ok(Method::Ba),
            other => Err(Error::invalid(format!("unknown method '{other}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InitEstimate<T: Scalar> {
    pub method: Method,
    pub layout: ParamLayout,
    /// `[v0; g0; e_a?; e_ω?]`.
    pub params: DVector<T>,
    pub v0: Vector3<T>,
    pub g0: Vector3<T>,
    pub accel_bias: Option<Vector3<T>>,
    pub gyro_bias: Option<Vector3<T>>,
    /// Covariance of `params` (SI units²) treating the row triplets of
    /// different pairs as independent.
    pub cov: Option<DMatrix<T>>,
    /// Covariance of `params` that also carries the correlation between rows
    /// sharing an observation. Usually the better calibrated of the two.
    pub cov_correlated: Option<DMatrix<T>>,
    /// Estimated pixel noise level.
    pub sigma_hat: Option<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Unit homogeneous solution.
    pub y: DVector<T>,
}

impl<T: Scalar> InitEstimate<T> {
    pub(crate) fn from_y(method: Method, layout: ParamLayout, y: DVector<T>) -> Result<Self> {
        let (params, _) = dehomogenize(&y)?;
        Ok(Self::from_params(method, layout, params, y))
    }

    pub(crate) fn from_params(method: Method, layout: ParamLayout, params: DVector<T>, y: DVector<T>) -> Self {
        let v = |o: usize| Vector3::new(params[o], params[o + 1], params[o + 2]);
        Self {
            method,
            layout,
            v0: v(0),
            g0: v(3),
            accel_bias: layout.accel_offset().map(v),
            gyro_bias: layout.gyro_offset().map(v),
            params,
            cov: None,
            cov_correlated: None,
            sigma_hat: None,
            iterations: 1,
            converged: true,
            y,
        }
    }

    /// Covariance of `[v0; g0]`.
    pub fn cov_v0_g0(&self) -> Option<DMatrix<T>> {
        self.cov.as_ref().map(|c| c.view((0, 0), (6, 6)).into_owned())
    }

    /// Per-component standard deviations of `params`.
    pub fn std_devs(&self) -> Option<DVector<T>> {
        self.cov
            .as_ref()
            .map(|c| DVector::from_iterator(c.nrows(), c.diagonal().iter().map(|&v| v.max(T::zero()).sqrt())))
    }

    /// Rescales the solution so that `|g0|` equals `magnitude`. Off by default
    /// in every pipeline; the linear stage does not constrain `|g0|`.
    pub fn rescaled_to_gravity(&self, magnitude: T) -> Result<Self> {
        let norm = self.g0.norm();
        if !(norm > T::zero()) {
            return Err(Error::invalid("cannot rescale a zero gravity vector"));
        }
        let k = magnitude / norm;
        let mut out = Self::from_params(self.method, self.layout, &self.params * k, self.y.clone());
        out.cov = self.cov.as_ref().map(|c| c * (k * k));
        out.cov_correlated = self.cov_correlated.as_ref().map(|c| c * (k * k));
        out.sigma_hat = self.sigma_hat;
        out.iterations = self.iterations;
        out.converged = self.converged;
        Ok(out)
    }
}

/// Rank-truncated weights of one pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WeightMatrix<T: Scalar> {
    pub w: Matrix3<T>,
    pub rank_used: usize,
}

impl<T: Scalar> WeightMatrix<T> {
    pub fn identity() -> Self {
        Self {
            w: Matrix3::identity(),
            rank_used: 3,
        }
    }

    /// Pseudoinverse of `v` truncated to rank 2 when `σ₂/σ₁ > ratio`, rank 1
    /// otherwise.
    pub fn from_projected(v: &Matrix3<T>, ratio: T) -> Self {
        let vd = DMatrix::from_column_slice(3, 3, v.as_slice());
        let (vals, _) = sym_eigen_sorted(&vd);
        let s1 = vals[2].max(T::zero());
        let s2 = vals[1].max(T::zero());
        if !(s1 > T::zero()) {
            return Self {
                w: Matrix3::zeros(),
                rank_used: 1,
            };
        }
        let rank = if s2 / s1 > ratio { 2 } else { 1 };
        let p = pinv_sym_rank(&vd, rank);
        Self {
            w: Matrix3::from_column_slice(p.as_slice()),
            rank_used: rank,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenormOptions<T: Scalar> {
    pub max_iter: usize,
    /// Convergence on `‖y − ±y₀‖∞`.
    pub tol: T,
    /// Threshold on `σ₂/σ₁` for keeping rank 2 in the weights.
    pub rank_ratio: T,
}

impl<T: Scalar> Default for RenormOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 30,
            tol: lit(1e-8),
            rank_ratio: lit(0.1),
        }
    }
}

/// `y ↦ y₁..ₙ₋₁ / yₙ` and its Jacobian `(1/yₙ²)[yₙ I | −y₁..ₙ₋₁]`.
pub fn dehomogenize<T: Scalar>(y: &DVector<T>) -> Result<(DVector<T>, DMatrix<T>)> {
    let n = y.len();
    if n < 2 {
        return Err(Error::invalid("homogeneous vector too short"));
    }
    let norm = y.norm();
    let last = y[n - 1];
    let thresh = if to_f64(T::default_epsilon()) < 1e-10 { lit(1e-12) } else { T::default_epsilon() * lit(10.0) };
    if !(norm > T::zero()) || !((last / norm).abs() > thresh) {
        return Err(Error::SolutionAtInfinity(to_f64(if norm > T::zero() { last / norm } else { last })));
    }
    let head = y.rows(0, n - 1) / last;
    let mut j = DMatrix::zeros(n - 1, n);
    let inv2 = T::one() / (last * last);
    for r in 0..n - 1 {
        j[(r, r)] = last * inv2;
        j[(r, n - 1)] = -y[r] * inv2;
    }
    Ok((head, j))
}

fn normalize_sign<T: Scalar>(mut y: DVector<T>) -> DVector<T> {
    let n = y.norm();
    if n > T::zero() {
        y /= n;
    }
    if y[y.len() - 1] < T::zero() {
        y.neg_mut();
    }
    y
}

/// Eigenvector of `M y = γ N y` with the smallest `|γ|`, unit norm.
///
/// Uses the symmetric-definite reduction through the Cholesky factor of `N`
/// when `N` is safely positive definite, otherwise the reciprocal problem
/// `N y = ν M y` through the factor of `M` (largest `|ν|`), and finally the
/// null vector of `M`.
pub fn generalized_eigen_smallest<T: Scalar>(m: &DMatrix<T>, n: &DMatrix<T>) -> Result<(T, DVector<T>)> {
    let dim = m.nrows();
    // Diagonal equilibration leaves the eigenvalues unchanged.
    let d = DVector::from_iterator(
        dim,
        (0..dim).map(|k| {
            let s = m[(k, k)].abs() + n[(k, k)].abs();
            if s > T::zero() {
                T::one() / s.sqrt()
            } else {
                T::one()
            }
        }),
    );
    let scale = |a: &DMatrix<T>| DMatrix::from_fn(dim, dim, |r, c| a[(r, c)] * d[r] * d[c]);
    let ms = scale(m);
    let ns = scale(n);
    let pivot_tol: T = if to_f64(T::default_epsilon()) < 1e-10 { lit(1e-10) } else { lit(1e-4) };

    let unscale = |z: DVector<T>| DVector::from_iterator(dim, (0..dim).map(|k| z[k] * d[k]));

    if let Ok(l) = cholesky_checked(&ns, pivot_tol) {
        let linv = l.solve_lower_triangular(&DMatrix::identity(dim, dim)).expect("positive pivots");
        let c = &linv * &ms * linv.transpose();
        let (vals, vecs) = sym_eigen_sorted(&c);
        let k = (0..dim)
            .min_by(|&a, &b| vals[a].abs().partial_cmp(&vals[b].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        let z = linv.transpose() * vecs.column(k);
        let (g, z) = polish(&ms, &ns, vals[k], z);
        return Ok((g, normalize_sign(unscale(z))));
    }
    if let Ok(l) = cholesky_checked(&ms, pivot_tol) {
        let linv = l.solve_lower_triangular(&DMatrix::identity(dim, dim)).expect("positive pivots");
        let c = &linv * &ns * linv.transpose();
        let (vals, vecs) = sym_eigen_sorted(&c);
        let k = (0..dim)
            .max_by(|&a, &b| vals[a].abs().partial_cmp(&vals[b].abs()).unwrap_or(std::cmp::Ordering::Equal))
            .unwrap_or(0);
        if vals[k].abs() > T::zero() {
            let z = linv.transpose() * vecs.column(k);
            return Ok((T::one() / vals[k], normalize_sign(unscale(z))));
        }
        return Err(Error::IndefiniteNormalization(to_f64(vals[0])));
    }
    let (vals, vecs) = sym_eigen_sorted(&ms);
    if vals[1] <= T::zero() {
        return Err(Error::IndefiniteNormalization(to_f64(vals[1])));
    }
    Ok((T::zero(), normalize_sign(unscale(vecs.column(0).into_owned()))))
}

/// Shifted inverse iteration; recovers the digits an ill-conditioned `N`
/// costs the Cholesky route.
fn polish<T: Scalar>(m: &DMatrix<T>, n: &DMatrix<T>, gamma: T, z: DVector<T>) -> (T, DVector<T>) {
    let mut g = gamma;
    let mut z = &z / z.norm();
    for _ in 0..2 {
        let lu = (m - n * g).full_piv_lu();
        let Some(next) = lu.solve(&(n * &z)) else { break };
        let norm = next.norm();
        if !(norm > T::zero()) || !norm.is_finite() {
            break;
        }
        z = next / norm;
        let den = (z.transpose() * n * &z)[0];
        if den > T::zero() {
            g = (z.transpose() * m * &z)[0] / den;
        }
    }
    (g, z)
}

fn check_rank<T: Scalar>(m: &DMatrix<T>, layout: ParamLayout) -> Result<()> {
    // Equilibrate first so that columns in different units compare fairly.
    let d = DVector::from_iterator(m.nrows(), m.diagonal().iter().map(|&v| {
        if v > T::zero() {
            T::one() / v.sqrt()
        } else {
            T::one()
        }
    }));
    let scaled = DMatrix::from_fn(m.nrows(), m.ncols(), |r, c| m[(r, c)] * d[r] * d[c]);
    let (vals, _) = sym_eigen_sorted(&scaled);
    let top = vals[vals.len() - 1];
    let tol = top * T::default_epsilon() * lit(1e3);
    let rank = vals.iter().filter(|&&v| v > tol).count();
    if rank + 1 < layout.n_cols() {
        return Err(Error::RankDeficient {
            rank,
            needed: layout.n_params(),
        });
    }
    Ok(())
}

/// Unit eigenvector of `M_ls = BᵀB / N` for the smallest eigenvalue.
pub fn solve_ls<T: Scalar>(reduced: &ReducedSystem<T>) -> Result<InitEstimate<T>> {
    let nf: T = from_usize(reduced.n_pairs());
    let m = reduced.b().tr_mul(reduced.b()) / nf;
    check_rank(&m, reduced.layout())?;
    let (_, vecs) = sym_eigen_sorted(&m);
    let y = normalize_sign(vecs.column(0).into_owned());
    InitEstimate::from_y(Method::Ls, reduced.layout(), y)
}

/// Single generalized eigenproblem with unit weights.
pub fn solve_taubin<T: Scalar>(reduced: &ReducedSystem<T>, covs: &RowCovariances<T>) -> Result<InitEstimate<T>> {
    let opts = RenormOptions {
        max_iter: 1,
        ..RenormOptions::default()
    };
    let mut est = renorm_loop(reduced, covs, &opts, true, Method::Taubin)?.estimate;
    est.cov = None;
    est.cov_correlated = None;
    est.sigma_hat = None;
    est.converged = true;
    Ok(est)
}

/// Renormalization with `N = I`.
pub fn solve_iter_reweight<T: Scalar>(
    reduced: &ReducedSystem<T>,
    covs: &RowCovariances<T>,
    opts: &RenormOptions<T>,
) -> Result<InitEstimate<T>> {
    Ok(renorm_loop(reduced, covs, opts, false, Method::IterReweight)?.estimate)
}

pub fn solve_renorm<T: Scalar>(
    reduced: &ReducedSystem<T>,
    covs: &RowCovariances<T>,
    opts: &RenormOptions<T>,
) -> Result<InitEstimate<T>> {
    Ok(renorm_loop(reduced, covs, opts, true, Method::Renorm)?.estimate)
}

/// Full iteration record of a reweighting run.
#[derive(Clone, Debug)]
pub struct RenormTrace<T: Scalar> {
    pub estimate: InitEstimate<T>,
    /// Unit solutions after each generalized eigen solve.
    pub iterates: Vec<DVector<T>>,
    /// Weights used at the last iteration.
    pub weights: Vec<WeightMatrix<T>>,
}

pub fn renorm_trace<T: Scalar>(
    reduced: &ReducedSystem<T>,
    covs: &RowCovariances<T>,
    opts: &RenormOptions<T>,
    use_normalization: bool,
) -> Result<RenormTrace<T>> {
    let method = if use_normalization { Method::Renorm } else { Method::IterReweight };
    renorm_loop(reduced, covs, opts, use_normalization, method)
}

fn weighted_moment<T: Scalar>(reduced: &ReducedSystem<T>, weights: &[WeightMatrix<T>]) -> DMatrix<T> {
    let n = reduced.n_cols();
    let nf: T = from_usize(reduced.n_pairs());
    let mut m = DMatrix::zeros(n, n);
    let b = reduced.b();
    for (alpha, w) in weights.iter().enumerate() {
        let rows = b.rows(3 * alpha, 3);
        let wb = DMatrix::from_column_slice(3, 3, w.w.as_slice()) * rows;
        m += rows.transpose() * wb;
    }
    m / nf
}

fn normalization<T: Scalar>(covs: &RowCovariances<T>, weights: &[WeightMatrix<T>], n: usize) -> DMatrix<T> {
    let nf: T = from_usize(weights.len());
    let mut out = DMatrix::zeros(n, n);
    for (alpha, w) in weights.iter().enumerate() {
        out += covs.weighted(alpha, &w.w);
    }
    out / nf
}

fn renorm_loop<T: Scalar>(
    reduced: &ReducedSystem<T>,
    covs: &RowCovariances<T>,
    opts: &RenormOptions<T>,
    use_normalization: bool,
    method: Method,
) -> Result<RenormTrace<T>> {
    let n_pairs = reduced.n_pairs();
    let ncols = reduced.n_cols();
    if covs.n_pairs() != n_pairs {
        return Err(Error::invalid("row covariances do not match the reduced system"));
    }
    if n_pairs == 0 {
        return Err(Error::InsufficientCorrespondences {
            pairs: 0,
            constraints: 0,
            needed: reduced.layout().n_params(),
        });
    }
    let mut weights = vec![WeightMatrix::identity(); n_pairs];
    let mut prev: Option<DVector<T>> = None;
    let mut iterates = Vec::new();
    let mut best: Option<(T, DVector<T>, DMatrix<T>, Vec<WeightMatrix<T>>)> = None;
    let mut converged = false;
    let mut final_state = None;

    for it in 1..=opts.max_iter.max(1) {
        let m = weighted_moment(reduced, &weights);
        if it == 1 {
            check_rank(&m, reduced.layout())?;
        }
        let y = if use_normalization {
            let nm = normalization(covs, &weights, ncols);
            generalized_eigen_smallest(&m, &nm)?.1
        } else {
            let (_, vecs) = sym_eigen_sorted(&m);
            normalize_sign(vecs.column(0).into_owned())
        };
        let cost = (y.transpose() * &m * &y)[0];
        iterates.push(y.clone());
        if best.as_ref().is_none_or(|b| cost < b.0) {
            best = Some((cost, y.clone(), m.clone(), weights.clone()));
        }

        let scale = m.trace().abs();
        // A residual at round-off level means noiseless data: weights cannot move y.
        let exact = cost.abs() <= scale * T::default_epsilon().sqrt() * lit(1e-4);
        let settled = prev.as_ref().is_some_and(|y0| {
            let d1 = (&y - y0).amax();
            let d2 = (&y + y0).amax();
            d1.min(d2) < opts.tol
        });
        if exact || settled {
            converged = true;
            final_state = Some((y, m, it));
            break;
        }
        if it == opts.max_iter.max(1) {
            // Keep the weights that built the returned M.
            final_state = Some((y, m, it));
            break;
        }
        for (alpha, w) in weights.iter_mut().enumerate() {
            *w = WeightMatrix::from_projected(&covs.projected(alpha, &y), opts.rank_ratio);
        }
        prev = Some(y.clone());
    }

    let (y, m, iterations) = if converged || opts.max_iter <= 1 {
        final_state.expect("at least one iteration")
    } else {
        log::warn!("{method} did not converge in {} iterations", opts.max_iter);
        let (_, y, m, w) = best.expect("at least one iteration");
        weights = w;
        (y, m, opts.max_iter)
    };

    let mut est = InitEstimate::from_y(method, reduced.layout(), y.clone())?;
    est.iterations = iterations;
    est.converged = converged;

    // Noise level and covariance of the parameters.
    let nf: T = from_usize(n_pairs);
    let dof = lit::<T>(2.0) - from_usize::<T>(reduced.layout().n_params()) / nf;
    if dof > T::zero() {
        let sigma2 = ((y.transpose() * &m * &y)[0] / dof).max(T::zero());
        let minv = pinv_sym_rank(&m, ncols - 1);
        let (_, jh) = dehomogenize(&y)?;
        let cov = &jh * (&minv * (sigma2 / nf)) * jh.transpose();
        est.sigma_hat = Some(sigma2.sqrt());
        est.cov = Some((&cov + cov.transpose()) * lit::<T>(0.5));
        est.cov_correlated = Some(correlated_covariance(reduced, covs.noise(), &y, &weights, sigma2.sqrt())?);
    }
    Ok(RenormTrace {
        estimate: est,
        iterates,
        weights,
    })
}

/// First-order covariance of the parameters that follows every observation
/// into all rows of its block, instead of treating the pair rows as
/// independent.
///
/// `weights` are the ones the final `M` was built with (identity for least
/// squares) and `sigma` the pixel noise level to scale by.
pub fn correlated_covariance<T: Scalar>(
    reduced: &ReducedSystem<T>,
    noise: &PointNoiseModel<T>,
    y: &DVector<T>,
    weights: &[WeightMatrix<T>],
    sigma: T,
) -> Result<DMatrix<T>> {
    let full = reduced.full();
    let n = reduced.n_cols();
    if weights.len() != reduced.n_pairs() {
        return Err(Error::invalid("weights do not match the reduced system"));
    }
    let nf: T = from_usize(reduced.n_pairs());
    let m = weighted_moment(reduced, weights);
    let b = reduced.b();
    let mut acc = DMatrix::zeros(n, n);
    for (c, col) in full.columns().iter().enumerate() {
        let rj = ray_jacobian_from_parts(&col.k_inv_top, &col.ray.r_tilde, &col.ray.p, col.ray.p_tilde.z);
        let a = rj.composite() * noise.factor(col.observation);
        let (blk, _) = full.column_slot(c);
        let pairs = &full.blocks()[blk].pairs;
        let rows: Vec<_> = pairs
            .iter()
            .map(|&alpha| {
                let dx = d_pair_rows(reduced, alpha, c, 0) * y;
                let dy = d_pair_rows(reduced, alpha, c, 1) * y;
                (alpha, dx, dy)
            })
            .collect();
        for k in 0..2 {
            let mut g = DVector::zeros(n);
            for (alpha, dx, dy) in &rows {
                let db = dx * a[(0, k)] + dy * a[(1, k)];
                let w = DMatrix::from_column_slice(3, 3, weights[*alpha].w.as_slice());
                g += b.rows(3 * alpha, 3).transpose() * (w * db);
            }
            acc += &g * g.transpose();
        }
    }
    let minv = pinv_sym_rank(&m, n - 1);
    let cov_y = &minv * acc * &minv * (sigma * sigma / (nf * nf));
    let (_, jh) = dehomogenize(y)?;
    let cov = &jh * cov_y * jh.transpose();
    Ok((&cov + cov.transpose()) * lit::<T>(0.5))
}
