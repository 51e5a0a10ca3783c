//! Vanilla RANSAC over correspondence pairs with the six-pair minimal solver.
//!
//! A pair is an inlier of a hypothesis when its ray distance is within the
//! threshold and, for observations shared with other pairs, the depth it
//! implies agrees with the rest of the track. There is no local optimization:
//! the returned set is the largest consensus of a minimal-sample model.

use std::collections::HashMap;

use nalgebra::{Matrix2, Vector2, Vector3};
use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rsvio_core::estimators::{solve_ls, InitEstimate};
use rsvio_core::geometry::SceneGeometry;
use rsvio_core::system::{assemble, reduce, AssemblyOptions, CorrespondenceSet, FullSystem, PairRow};

use crate::{Result, SynthError};

/// Pairs in a minimal sample: six one-pair tracks give six constraints.
pub const MINIMAL_PAIRS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacOptions {
    pub iterations: usize,
    /// Expected pixel noise; the inlier threshold is a multiple of it.
    pub sigma_assumed: f64,
    pub threshold_factor: f64,
    /// Lower bound on the noise used for the threshold, so noiseless data
    /// still tolerates round-off and IMU noise.
    pub min_sigma: f64,
    /// Multiple of the threshold allowed for the track residual, which also
    /// carries the noise of the other observations of the track.
    pub track_factor: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        Self {
            iterations: 200,
            sigma_assumed: 0.3,
            threshold_factor: 3.0,
            min_sigma: 0.1,
            track_factor: 3.0,
            seed: 0,
        }
    }
}

impl RansacOptions {
    pub fn threshold(&self) -> f64 {
        self.threshold_factor * self.sigma_assumed.max(self.min_sigma)
    }
}

#[derive(Clone, Debug)]
pub struct RansacOutcome {
    /// Indices into the input pairs, ascending.
    pub inliers: Vec<usize>,
    /// The input restricted to the inliers.
    pub set: CorrespondenceSet<f64>,
    /// Minimal-sample model that produced the consensus.
    pub model: InitEstimate<f64>,
    /// Minimal samples that could be solved.
    pub solved_samples: usize,
}

/// Residuals of one pair under a motion hypothesis, in pixels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairResidual {
    /// Closest approach of the two rays with both depths free, scaled so that
    /// it is comparable to the pixel noise of one coordinate.
    pub distance: f64,
    /// Reprojection-like error with the depth of every shared observation
    /// fixed to the median over its pairs. A pair alone only tests the
    /// epipolar constraint, so a gross mismatch that happens to fall near the
    /// epipolar line passes `distance`; this ties the pair to its track.
    /// Zero when neither observation is shared.
    pub track: f64,
}

impl PairResidual {
    const REJECTED: PairResidual = PairResidual {
        distance: f64::INFINITY,
        track: f64::INFINITY,
    };
}

/// Residuals of every assembled pair under the motion `(v0, g0)`. Pairs whose
/// rays meet behind a camera are rejected with infinite residuals. Only pairs
/// with `distance <= vote_gate` vote on the depth of shared observations.
pub fn pair_residuals(
    full: &FullSystem<f64>,
    geom: &SceneGeometry<'_, f64>,
    v0: &Vector3<f64>,
    g0: &Vector3<f64>,
    vote_gate: f64,
) -> Result<Vec<PairResidual>> {
    let cols = full.columns();
    let rays = |row: &PairRow<f64>| {
        let c = v0 * row.xi + g0 * row.mu + row.kappa;
        (c, cols[row.a].ray.p, -cols[row.b].ray.p)
    };

    // Closest approach of each pair on its own.
    let mut own: Vec<Option<(f64, f64, f64)>> = Vec::with_capacity(full.n_pairs());
    for row in full.pairs() {
        let (c, pa, pb) = rays(row);
        let ata = Matrix2::new(pa.dot(&pa), pa.dot(&pb), pa.dot(&pb), pb.dot(&pb));
        let atc = Vector2::new(pa.dot(&c), pb.dot(&c));
        let Some(lam) = ata.try_inverse().map(|inv| -(inv * atc)) else {
            own.push(None);
            continue;
        };
        let da = lam.x / cols[row.a].ray.p_tilde.z;
        let db = lam.y / cols[row.b].ray.p_tilde.z;
        if !(da > 0.0 && db > 0.0) {
            own.push(None);
            continue;
        }
        let fa = geom.calib.camera(cols[row.a].cam_id)?.k[(0, 0)];
        let fb = geom.calib.camera(cols[row.b].cam_id)?.k[(0, 0)];
        // Equal pixel errors e at both ends move the rays apart by about
        // e·sqrt((da/fa)² + (db/fb)²).
        let distance = (c + pa * lam.x + pb * lam.y).norm() / ((da / fa).powi(2) + (db / fb).powi(2)).sqrt();
        own.push(Some((lam.x, lam.y, distance)));
    }

    let mut votes: Vec<Vec<f64>> = vec![Vec::new(); cols.len()];
    for (row, own) in full.pairs().iter().zip(&own) {
        if let Some((la, lb, d)) = *own {
            if d <= vote_gate {
                votes[row.a].push(la);
                votes[row.b].push(lb);
            }
        }
    }
    let shared: Vec<Option<f64>> = votes
        .into_iter()
        .map(|mut v| (v.len() >= 2).then(|| median(&mut v)))
        .collect();

    // Offset of a fixed point from the ray `dir`, over the metres per pixel
    // at its depth.
    let reproject = |offset: Vector3<f64>, dir: Vector3<f64>, z: f64, f: f64| {
        let l = -dir.dot(&offset) / dir.dot(&dir);
        if l / z > 0.0 {
            (offset + dir * l).norm() / (l / z / f)
        } else {
            f64::INFINITY
        }
    };
    let mut out = Vec::with_capacity(full.n_pairs());
    for (row, own) in full.pairs().iter().zip(own) {
        let Some((_, _, distance)) = own else {
            out.push(PairResidual::REJECTED);
            continue;
        };
        let (c, pa, pb) = rays(row);
        let (za, zb) = (cols[row.a].ray.p_tilde.z, cols[row.b].ray.p_tilde.z);
        let mut track = 0.0_f64;
        if let Some(a) = shared[row.a] {
            let fb = geom.calib.camera(cols[row.b].cam_id)?.k[(0, 0)];
            let e = if a / za > 0.0 { reproject(c + pa * a, pb, zb, fb) } else { f64::INFINITY };
            track = track.max(e);
        }
        if let Some(b) = shared[row.b] {
            let fa = geom.calib.camera(cols[row.a].cam_id)?.k[(0, 0)];
            let e = if b / zb > 0.0 { reproject(c + pb * b, pa, za, fa) } else { f64::INFINITY };
            track = track.max(e);
        }
        out.push(PairResidual { distance, track });
    }
    Ok(out)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Largest consensus subset of the pairs of `set`.
pub fn ransac_prune(set: &CorrespondenceSet<f64>, geom: &SceneGeometry<'_, f64>, opts: &RansacOptions) -> Result<RansacOutcome> {
    let n = set.pairs().len();
    if n < MINIMAL_PAIRS {
        return Err(rsvio_core::Error::InsufficientCorrespondences {
            pairs: n,
            constraints: n as isize,
            needed: MINIMAL_PAIRS,
        }
        .into());
    }
    let assembly = AssemblyOptions::default();
    let full = assemble(set, geom, &assembly)?;
    // Assembled rows follow the input order but may skip pairs.
    let by_obs: HashMap<(usize, usize), usize> = set.pairs().iter().enumerate().map(|(k, p)| ((p.a, p.b), k)).collect();
    let row_pair: Vec<usize> = full
        .pairs()
        .iter()
        .map(|r| by_obs[&(full.columns()[r.a].observation, full.columns()[r.b].observation)])
        .collect();

    let mut by_track: HashMap<usize, Vec<usize>> = HashMap::new();
    for &k in &row_pair {
        by_track.entry(set.observations()[set.pairs()[k].a].track).or_default().push(k);
    }
    let mut tracks: Vec<usize> = by_track.keys().copied().collect();
    tracks.sort_unstable();
    if tracks.len() < MINIMAL_PAIRS {
        return Err(SynthError::NoConsensus {
            found: 0,
            needed: MINIMAL_PAIRS,
        });
    }

    let threshold = opts.threshold();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(Vec<usize>, InitEstimate<f64>)> = None;
    let mut solved = 0;
    for _ in 0..opts.iterations {
        let picked: Vec<usize> = tracks.choose_multiple(&mut rng, MINIMAL_PAIRS).copied().collect();
        let sample: Vec<usize> = picked
            .iter()
            .map(|t| *by_track[t].choose(&mut rng).expect("tracks have pairs"))
            .collect();
        let Ok(model) = minimal_solve(set, geom, &sample, &assembly) else {
            continue;
        };
        solved += 1;
        let residuals = pair_residuals(&full, geom, &model.v0, &model.g0, threshold)?;
        let mut inliers: Vec<usize> = residuals
            .iter()
            .zip(&row_pair)
            .filter(|(r, _)| r.distance <= threshold && r.track <= opts.track_factor * threshold)
            .map(|(_, &k)| k)
            .collect();
        inliers.sort_unstable();
        if best.as_ref().is_none_or(|(b, _)| inliers.len() > b.len()) {
            best = Some((inliers, model));
        }
    }
    match best {
        Some((inliers, model)) if inliers.len() >= MINIMAL_PAIRS => {
            log::debug!("ransac kept {} of {n} pairs ({solved} samples solved)", inliers.len());
            Ok(RansacOutcome {
                set: set.subset(&inliers),
                inliers,
                model,
                solved_samples: solved,
            })
        }
        other => Err(SynthError::NoConsensus {
            found: other.map_or(0, |(i, _)| i.len()),
            needed: MINIMAL_PAIRS,
        }),
    }
}

fn minimal_solve(
    set: &CorrespondenceSet<f64>,
    geom: &SceneGeometry<'_, f64>,
    pairs: &[usize],
    assembly: &AssemblyOptions,
) -> rsvio_core::Result<InitEstimate<f64>> {
    let sub = set.subset(pairs);
    solve_ls(&reduce(assemble(&sub, geom, assembly)?)?)
}
