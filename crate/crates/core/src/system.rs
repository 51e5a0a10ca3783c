//! Linear system `[S P] x = 0` over `x = [v0; g0; 1; λ…]` and its reduction
//! to the fixed-width system `B y = 0` by eliminating the depths.
//!
//! Each pair `(a, b)` of observations of the same point contributes the
//! three equations
//!
//! ```text
//! ξ v0 + μ g0 + κ + λ_a p_a − λ_b p_b = 0
//! ```
//!
//! so `P` carries `+p` for the first observation of a pair and `−p` for the
//! second. Depth columns are shared by every pair that references the same
//! observation.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, Matrix2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Observation, Ray, SceneGeometry, ScanlineKinematics};
use crate::linalg::{cholesky_checked, cholesky_inverse};
use crate::scalar::{from_usize, lit, to_f64, Scalar};

/// A camera at a frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct View {
    pub cam: usize,
    pub frame: usize,
}

impl View {
    pub fn new(cam: usize, frame: usize) -> Self {
        Self { cam, frame }
    }
}

pub type ViewPair = (View, View);

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairingMode {
    /// `l_a – r_b` for every `a < b`.
    #[default]
    StereoDense,
    /// `l_1 – r_b` only.
    StereoFirstAnchor,
    /// `l_a – l_b` for every `a < b`.
    Mono,
    /// `l_1 – l_b` only.
    MonoFirstAnchor,
}

impl PairingMode {
    pub const ALL: [PairingMode; 4] = [
        PairingMode::StereoDense,
        PairingMode::StereoFirstAnchor,
        PairingMode::Mono,
        PairingMode::MonoFirstAnchor,
    ];

    pub fn is_stereo(self) -> bool {
        matches!(self, PairingMode::StereoDense | PairingMode::StereoFirstAnchor)
    }

    pub fn min_frames(self) -> usize {
        if self.is_stereo() {
            2
        } else {
            5
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PairingMode::StereoDense => "stereo-dense",
            PairingMode::StereoFirstAnchor => "stereo-first-anchor",
            PairingMode::Mono => "mono",
            PairingMode::MonoFirstAnchor => "mono-first-anchor",
        }
    }
}

impl fmt::Display for PairingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PairingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PairingMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown pairing mode '{s}'")))
    }
}

/// View pairs to link. Frames are zero-based, camera 0 is the left one.
/// Pairs within a single frame are never produced.
pub fn make_pairing(frames: usize, mode: PairingMode) -> Result<Vec<ViewPair>> {
    if frames < mode.min_frames() {
        return Err(Error::invalid(format!(
            "pairing mode {mode} needs at least {} frames, got {frames}",
            mode.min_frames()
        )));
    }
    let second_cam = if mode.is_stereo() { 1 } else { 0 };
    let anchors = match mode {
        PairingMode::StereoDense | PairingMode::Mono => frames - 1,
        PairingMode::StereoFirstAnchor | PairingMode::MonoFirstAnchor => 1,
    };
    let mut out = Vec::new();
    for a in 0..anchors {
        for b in (a + 1)..frames {
            out.push((View::new(0, a), View::new(second_cam, b)));
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrackedObservation<T: Scalar> {
    pub obs: Observation<T>,
    /// Identity of the underlying 3D point.
    pub track: usize,
}

/// Indices of two observations of the same track.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Correspondence {
    pub a: usize,
    pub b: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet<T: Scalar> {
    observations: Vec<TrackedObservation<T>>,
    pairs: Vec<Correspondence>,
}

impl<T: Scalar> CorrespondenceSet<T> {
    pub fn new(observations: Vec<TrackedObservation<T>>, pairs: Vec<Correspondence>) -> Result<Self> {
        for (k, c) in pairs.iter().enumerate() {
            let n = observations.len();
            if c.a >= n || c.b >= n {
                return Err(Error::IndexOutOfRange {
                    index: c.a.max(c.b),
                    limit: n,
                });
            }
            if c.a == c.b {
                return Err(Error::invalid(format!("pair {k} links an observation to itself")));
            }
            if observations[c.a].track != observations[c.b].track {
                return Err(Error::invalid(format!("pair {k} links two different tracks")));
            }
        }
        Ok(Self { observations, pairs })
    }

    /// Links the observations of every track according to `pairing`.
    /// Tracks with fewer than two observations are rejected.
    pub fn from_tracks(tracks: &[Vec<Observation<T>>], pairing: &[ViewPair]) -> Result<Self> {
        let mut observations = Vec::new();
        let mut pairs = Vec::new();
        for (t, track) in tracks.iter().enumerate() {
            if track.len() < 2 {
                return Err(Error::invalid(format!("track {t} has fewer than 2 observations")));
            }
            let base = observations.len();
            let mut by_view = HashMap::new();
            for (k, obs) in track.iter().enumerate() {
                if by_view.insert(View::new(obs.cam_id, obs.frame), base + k).is_some() {
                    return Err(Error::invalid(format!(
                        "track {t} observes camera {} frame {} twice",
                        obs.cam_id, obs.frame
                    )));
                }
                observations.push(TrackedObservation { obs: *obs, track: t });
            }
            for (va, vb) in pairing {
                if let (Some(&a), Some(&b)) = (by_view.get(va), by_view.get(vb)) {
                    pairs.push(Correspondence { a, b });
                }
            }
        }
        Self::new(observations, pairs)
    }

    pub fn observations(&self) -> &[TrackedObservation<T>] {
        &self.observations
    }

    pub fn observations_mut(&mut self) -> &mut [TrackedObservation<T>] {
        &mut self.observations
    }

    pub fn pairs(&self) -> &[Correspondence] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Same observations, only the listed pairs.
    pub fn subset(&self, pair_indices: &[usize]) -> Self {
        Self {
            observations: self.observations.clone(),
            pairs: pair_indices.iter().map(|&k| self.pairs[k]).collect(),
        }
    }

    /// Replaces one observation by a fresh, unshared one and rewires pair
    /// `pair` to it. Returns the new observation index.
    pub fn detach(&mut self, pair: usize, second: bool, obs: Observation<T>) -> usize {
        let c = &mut self.pairs[pair];
        let track = self.observations[c.a].track;
        self.observations.push(TrackedObservation { obs, track });
        let idx = self.observations.len() - 1;
        if second {
            c.b = idx;
        } else {
            c.a = idx;
        }
        idx
    }
}

/// `ξ`, `μ` and `κ` of one pair of scanlines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairCoefficients<T: Scalar> {
    pub xi: T,
    pub mu: T,
    pub kappa: Vector3<T>,
}

/// Coefficients for scanlines `i`, `j` seen through cameras with IMU-frame
/// offsets `t_ci`, `t_cj`.
pub fn pair_coefficients<T: Scalar>(
    kin: &ScanlineKinematics<T>,
    i: usize,
    j: usize,
    t_ci: &Vector3<T>,
    t_cj: &Vector3<T>,
) -> Result<PairCoefficients<T>> {
    if i == j {
        return Err(Error::DegeneratePair(i));
    }
    let dt = kin.dt();
    let (fi, fj): (T, T) = (from_usize(i), from_usize(j));
    let xi = (fi - fj) * dt;
    let mu = (fi * fi - fj * fj) * dt * dt * lit(0.5);
    let kappa = kin.rotation(i)? * t_ci - kin.rotation(j)? * t_cj + kin.accel_displacement(i)?
        - kin.accel_displacement(j)?;
    Ok(PairCoefficients { xi, mu, kappa })
}

/// Which optional bias unknowns sit between `g0` and the homogeneous 1.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParamLayout {
    pub accel_bias: bool,
    pub gyro_bias: bool,
}

impl ParamLayout {
    /// Unknowns excluding the homogeneous coordinate.
    pub fn n_params(&self) -> usize {
        6 + 3 * self.accel_bias as usize + 3 * self.gyro_bias as usize
    }

    /// Columns of `S` and `B`.
    pub fn n_cols(&self) -> usize {
        self.n_params() + 1
    }

    pub fn n_bias_cols(&self) -> usize {
        self.n_params() - 6
    }

    pub fn accel_offset(&self) -> Option<usize> {
        self.accel_bias.then_some(6)
    }

    pub fn gyro_offset(&self) -> Option<usize> {
        self.gyro_bias.then_some(6 + 3 * self.accel_bias as usize)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AssemblyOptions {
    /// Pairs closer than this many scanlines are dropped. `None` uses half a frame.
    pub min_scanline_gap: Option<usize>,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { min_scanline_gap: None }
    }
}

/// One depth column of `P`.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationColumn<T: Scalar> {
    /// Index into the correspondence set.
    pub observation: usize,
    pub track: usize,
    pub cam_id: usize,
    pub scanline: usize,
    pub u: Vector3<T>,
    pub ray: Ray<T>,
    /// Pixel-to-normalized derivative `∂(K⁻¹u)₁₂/∂u₁₂`.
    pub k_inv_top: Matrix2<T>,
    /// `d_i + R_i t_c`: camera centre minus the `v0`/`g0` terms.
    pub center_offset: Vector3<T>,
    /// Pairs using this column with the sign of its entry in `P`.
    pub pairs: Vec<(usize, i8)>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairRow<T: Scalar> {
    /// Depth column of the first observation (`+p`).
    pub a: usize,
    /// Depth column of the second observation (`−p`).
    pub b: usize,
    pub i: usize,
    pub j: usize,
    pub xi: T,
    pub mu: T,
    pub kappa: Vector3<T>,
}

/// Connected set of pairs sharing depth columns. `PᵀP` is block diagonal
/// over these.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub columns: Vec<usize>,
    pub pairs: Vec<usize>,
}

/// Inputs handed to the hook that fills optional bias columns.
pub(crate) struct PairContext<'a, T: Scalar> {
    pub a: &'a ObservationColumn<T>,
    pub b: &'a ObservationColumn<T>,
}

#[derive(Clone, Debug)]
pub struct FullSystem<T: Scalar> {
    s: DMatrix<T>,
    columns: Vec<ObservationColumn<T>>,
    pairs: Vec<PairRow<T>>,
    blocks: Vec<Block>,
    /// `(block, local index)` for every pair and column.
    pair_slot: Vec<(usize, usize)>,
    column_slot: Vec<(usize, usize)>,
    layout: ParamLayout,
    dropped_pairs: usize,
}

/// Builds `S` and `P` for the plain `[v0; g0; 1]` layout.
pub fn assemble<T: Scalar>(
    set: &CorrespondenceSet<T>,
    geom: &SceneGeometry<'_, T>,
    opts: &AssemblyOptions,
) -> Result<FullSystem<T>> {
    assemble_with(set, geom, opts, ParamLayout::default(), |_, _, _| Ok(()))
}

pub(crate) fn assemble_with<T, F>(
    set: &CorrespondenceSet<T>,
    geom: &SceneGeometry<'_, T>,
    opts: &AssemblyOptions,
    layout: ParamLayout,
    mut extra: F,
) -> Result<FullSystem<T>>
where
    T: Scalar,
    F: FnMut(&PairContext<'_, T>, &mut DMatrix<T>, &mut Vector3<T>) -> Result<()>,
{
    let gap = opts
        .min_scanline_gap
        .unwrap_or_else(|| (to_f64(geom.clock.lines_per_frame()) * 0.5).round() as usize)
        .max(1);

    let mut columns: Vec<ObservationColumn<T>> = Vec::new();
    let mut column_of: HashMap<usize, usize> = HashMap::new();
    let mut pairs = Vec::new();
    let mut dropped = 0;
    let mut column_for = |idx: usize, columns: &mut Vec<ObservationColumn<T>>| -> Result<usize> {
        if let Some(&c) = column_of.get(&idx) {
            return Ok(c);
        }
        let tob = &set.observations()[idx];
        tob.obs.validate(geom.calib)?;
        let scanline = geom.scanline(&tob.obs);
        let cam = geom.calib.camera(tob.obs.cam_id)?;
        let ray = geom.ray(&tob.obs)?;
        let kin = geom.kinematics;
        let center_offset = kin.accel_displacement(scanline)? + kin.rotation(scanline)? * cam.t_cam_imu;
        columns.push(ObservationColumn {
            observation: idx,
            track: tob.track,
            cam_id: tob.obs.cam_id,
            scanline,
            u: tob.obs.u,
            ray,
            k_inv_top: cam.k_inv_top(),
            center_offset,
            pairs: Vec::new(),
        });
        column_of.insert(idx, columns.len() - 1);
        Ok(columns.len() - 1)
    };

    for c in set.pairs() {
        let oa = &set.observations()[c.a].obs;
        let ob = &set.observations()[c.b].obs;
        let (i, j) = (geom.scanline(oa), geom.scanline(ob));
        if i.abs_diff(j) < gap {
            dropped += 1;
            continue;
        }
        let ca = column_for(c.a, &mut columns)?;
        let cb = column_for(c.b, &mut columns)?;
        let t_ci = geom.calib.camera(oa.cam_id)?.t_cam_imu;
        let t_cj = geom.calib.camera(ob.cam_id)?.t_cam_imu;
        let coef = pair_coefficients(geom.kinematics, i, j, &t_ci, &t_cj)?;
        let alpha = pairs.len();
        columns[ca].pairs.push((alpha, 1));
        columns[cb].pairs.push((alpha, -1));
        pairs.push(PairRow {
            a: ca,
            b: cb,
            i,
            j,
            xi: coef.xi,
            mu: coef.mu,
            kappa: coef.kappa,
        });
    }
    if dropped > 0 {
        log::debug!("dropped {dropped} pairs closer than {gap} scanlines");
    }

    let n = pairs.len();
    let m = columns.len();
    let constraints = 3 * n as isize - m as isize;
    if constraints < layout.n_params() as isize || n == 0 {
        return Err(Error::InsufficientCorrespondences {
            pairs: n,
            constraints,
            needed: layout.n_params(),
        });
    }

    let ncols = layout.n_cols();
    let nb = layout.n_bias_cols();
    let mut s = DMatrix::zeros(3 * n, ncols);
    let mut extra_block = DMatrix::zeros(3, nb);
    for (alpha, row) in pairs.iter_mut().enumerate() {
        extra_block.fill(T::zero());
        let ctx = PairContext {
            a: &columns[row.a],
            b: &columns[row.b],
        };
        extra(&ctx, &mut extra_block, &mut row.kappa)?;
        if nb > 0 {
            s.view_mut((3 * alpha, 6), (3, nb)).copy_from(&extra_block);
        }
        for r in 0..3 {
            s[(3 * alpha + r, r)] = row.xi;
            s[(3 * alpha + r, 3 + r)] = row.mu;
            s[(3 * alpha + r, ncols - 1)] = row.kappa[r];
        }
    }

    // Every column is referenced by construction; guard anyway.
    if let Some(c) = columns.iter().position(|c| c.pairs.is_empty()) {
        return Err(Error::invalid(format!("depth column {c} is not referenced by any pair")));
    }

    let blocks = connected_blocks(&pairs, m);
    let mut pair_slot = vec![(0, 0); n];
    let mut column_slot = vec![(0, 0); m];
    for (k, b) in blocks.iter().enumerate() {
        for (l, &p) in b.pairs.iter().enumerate() {
            pair_slot[p] = (k, l);
        }
        for (l, &c) in b.columns.iter().enumerate() {
            column_slot[c] = (k, l);
        }
    }

    Ok(FullSystem {
        s,
        columns,
        pairs,
        blocks,
        pair_slot,
        column_slot,
        layout,
        dropped_pairs: dropped,
    })
}

fn connected_blocks<T: Scalar>(pairs: &[PairRow<T>], m: usize) -> Vec<Block> {
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for p in pairs {
        let (ra, rb) = (find(&mut parent, p.a), find(&mut parent, p.b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut index_of_root = HashMap::new();
    let mut blocks: Vec<Block> = Vec::new();
    for c in 0..m {
        let r = find(&mut parent, c);
        let k = *index_of_root.entry(r).or_insert_with(|| {
            blocks.push(Block {
                columns: Vec::new(),
                pairs: Vec::new(),
            });
            blocks.len() - 1
        });
        blocks[k].columns.push(c);
    }
    for (alpha, p) in pairs.iter().enumerate() {
        let r = find(&mut parent, p.a);
        blocks[index_of_root[&r]].pairs.push(alpha);
    }
    blocks
}

impl<T: Scalar> FullSystem<T> {
    /// The `3N × n` coefficient matrix.
    pub fn s(&self) -> &DMatrix<T> {
        &self.s
    }

    pub fn layout(&self) -> ParamLayout {
        self.layout
    }

    pub fn n_cols(&self) -> usize {
        self.layout.n_cols()
    }

    pub fn n_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Number of depth columns `M`.
    pub fn n_depths(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[ObservationColumn<T>] {
        &self.columns
    }

    pub fn pairs(&self) -> &[PairRow<T>] {
        &self.pairs
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    /// Pairs discarded for being too close in time.
    pub fn dropped_pairs(&self) -> usize {
        self.dropped_pairs
    }

    pub(crate) fn pair_slot(&self, alpha: usize) -> (usize, usize) {
        self.pair_slot[alpha]
    }

    pub(crate) fn column_slot(&self, c: usize) -> (usize, usize) {
        self.column_slot[c]
    }

    #[cfg(test)]
    pub(crate) fn s_mut(&mut self) -> &mut DMatrix<T> {
        &mut self.s
    }

    /// Dense `3N × M` depth matrix.
    pub fn p_dense(&self) -> DMatrix<T> {
        let mut p = DMatrix::zeros(3 * self.pairs.len(), self.columns.len());
        for (c, col) in self.columns.iter().enumerate() {
            for &(alpha, sign) in &col.pairs {
                let v = if sign > 0 { col.ray.p } else { -col.ray.p };
                p.view_mut((3 * alpha, c), (3, 1)).copy_from(&v);
            }
        }
        p
    }

    /// `S y + P λ`.
    pub fn residual(&self, y: &DVector<T>, lambda: &DVector<T>) -> DVector<T> {
        &self.s * y + self.p_dense() * lambda
    }

    fn block_p(&self, k: usize) -> DMatrix<T> {
        let b = &self.blocks[k];
        let mut p = DMatrix::zeros(3 * b.pairs.len(), b.columns.len());
        for (l, &alpha) in b.pairs.iter().enumerate() {
            let row = &self.pairs[alpha];
            let (_, la) = self.column_slot[row.a];
            let (_, lb) = self.column_slot[row.b];
            p.view_mut((3 * l, la), (3, 1)).copy_from(&self.columns[row.a].ray.p);
            p.view_mut((3 * l, lb), (3, 1)).copy_from(&(-self.columns[row.b].ray.p));
        }
        p
    }

    fn block_s(&self, k: usize) -> DMatrix<T> {
        let b = &self.blocks[k];
        let n = self.n_cols();
        let mut s = DMatrix::zeros(3 * b.pairs.len(), n);
        for (l, &alpha) in b.pairs.iter().enumerate() {
            s.view_mut((3 * l, 0), (3, n))
                .copy_from(&self.s.view((3 * alpha, 0), (3, n)));
        }
        s
    }
}

/// Per-block factors of the depth elimination.
#[derive(Clone, Debug)]
pub(crate) struct BlockFactors<T: Scalar> {
    /// Local `P`.
    pub p: DMatrix<T>,
    /// `P (PᵀP)⁻¹`.
    pub h: DMatrix<T>,
    /// `(PᵀP)⁻¹ Pᵀ S`.
    pub q: DMatrix<T>,
    /// Local rows of `B`.
    pub b: DMatrix<T>,
}

/// `B = (I − G) S` with `G = P (PᵀP)⁻¹ Pᵀ`, evaluated block by block.
#[derive(Clone, Debug)]
pub struct ReducedSystem<T: Scalar> {
    full: FullSystem<T>,
    b: DMatrix<T>,
    factors: Vec<BlockFactors<T>>,
}

pub fn reduce<T: Scalar>(full: FullSystem<T>) -> Result<ReducedSystem<T>> {
    let n = full.n_cols();
    let mut b = DMatrix::zeros(3 * full.n_pairs(), n);
    let mut factors = Vec::with_capacity(full.blocks.len());
    let tol = T::default_epsilon() * lit(1e3);
    for k in 0..full.blocks.len() {
        let p = full.block_p(k);
        let s = full.block_s(k);
        let ptp = p.transpose() * &p;
        let l = cholesky_checked(&ptp, tol).map_err(|local| Error::DegenerateTrack {
            observation: full.columns[full.blocks[k].columns[local]].observation,
        })?;
        let ptp_inv = cholesky_inverse(&l);
        let h = &p * &ptp_inv;
        let q = h.transpose() * &s;
        let bk = &s - &p * &q;
        for (l, &alpha) in full.blocks[k].pairs.iter().enumerate() {
            b.view_mut((3 * alpha, 0), (3, n))
                .copy_from(&bk.view((3 * l, 0), (3, n)));
        }
        factors.push(BlockFactors { p, h, q, b: bk });
    }
    Ok(ReducedSystem { full, b, factors })
}

/// Depths recovered from a parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Depths<T: Scalar> {
    /// `λ` per depth column, along rays with unit third component.
    pub lambda: Vec<T>,
    /// Depth along the optical axis of the observing camera.
    pub camera_depth: Vec<T>,
    /// Columns whose camera depth is negative.
    pub behind: Vec<usize>,
}

impl<T: Scalar> ReducedSystem<T> {
    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn full(&self) -> &FullSystem<T> {
        &self.full
    }

    pub fn into_full(self) -> FullSystem<T> {
        self.full
    }

    pub fn n_pairs(&self) -> usize {
        self.full.n_pairs()
    }

    pub fn n_cols(&self) -> usize {
        self.full.n_cols()
    }

    pub fn layout(&self) -> ParamLayout {
        self.full.layout
    }

    pub(crate) fn factors(&self) -> &[BlockFactors<T>] {
        &self.factors
    }

    /// Row `s ∈ {0,1,2}` of pair `alpha`.
    pub fn row(&self, alpha: usize, s: usize) -> DVector<T> {
        self.b.row(3 * alpha + s).transpose()
    }

    /// Dense `G` of block `k` (for diagnostics and tests).
    pub fn block_projector(&self, k: usize) -> DMatrix<T> {
        let f = &self.factors[k];
        &f.h * f.p.transpose()
    }

    /// Least-squares depths for fixed `y`; `y` is rescaled so its last
    /// component is 1.
    pub fn recover_depths(&self, y: &DVector<T>) -> Result<Depths<T>> {
        let last = y[y.len() - 1];
        if last.abs() <= T::default_epsilon() * y.norm() {
            return Err(Error::SolutionAtInfinity(to_f64(last)));
        }
        let y = y / last;
        let m = self.full.n_depths();
        let mut lambda = vec![T::zero(); m];
        for (k, f) in self.factors.iter().enumerate() {
            let local = &f.q * &y;
            for (l, &c) in self.full.blocks[k].columns.iter().enumerate() {
                lambda[c] = -local[l];
            }
        }
        let camera_depth: Vec<T> = lambda
            .iter()
            .zip(&self.full.columns)
            .map(|(&l, c)| l / c.ray.p_tilde.z)
            .collect();
        let behind: Vec<usize> = camera_depth
            .iter()
            .enumerate()
            .filter(|(_, &d)| d < T::zero())
            .map(|(c, _)| c)
            .collect();
        if !behind.is_empty() {
            log::warn!("{} reconstructed depths lie behind their camera", behind.len());
        }
        Ok(Depths {
            lambda,
            camera_depth,
            behind,
        })
    }
}
