mod common;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use rsvio_core::estimators::solve_ls;
use rsvio_core::geometry::{SceneGeometry, Shutter};
use rsvio_core::system::{assemble, make_pairing, reduce, CorrespondenceSet, PairingMode};

/// Smallest right singular vector of `S` restricted to the orthogonal
/// complement of the range of `P`, from a dense SVD of `P`.
fn dense_reduced_minimizer(s: &DMatrix<f64>, p: &DMatrix<f64>) -> nalgebra::DVector<f64> {
    let rows = s.nrows();
    let svd = p.clone().svd(true, false);
    let u = svd.u.unwrap();
    let tol = 1e-10 * svd.singular_values.max();
    let rank = svd.singular_values.iter().filter(|&&v| v > tol).count();
    // Complete the basis with a QR of [U | I].
    let mut q = DMatrix::zeros(rows, rows);
    let mut m = DMatrix::zeros(rows, rank + rows);
    m.view_mut((0, 0), (rows, rank)).copy_from(&u.columns(0, rank));
    m.view_mut((0, rank), (rows, rows)).fill_with_identity();
    let qr = m.qr();
    q.copy_from(&qr.q().columns(0, rows));
    let comp = q.columns(rank, rows - rank).into_owned();
    let b = comp.transpose() * s;
    let svd = b.svd(false, true);
    let vt = svd.v_t.unwrap();
    let k = svd.singular_values.imin();
    let y = vt.row(k).transpose();
    &y / y[y.len() - 1]
}

#[test]
fn full_and_reduced_minimizers_agree() {
    let n = 100;
    let mut worst: f64 = 0.0;
    for seed in 0..n {
        let w = common::world(1000 + seed, 3 + (seed as usize % 3), 8);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Normal::new(0.0, 0.3).unwrap();
        let frames = w.tracks[0].len() / 2;
        let pairing = make_pairing(frames, PairingMode::StereoDense).unwrap();
        let mut set = CorrespondenceSet::from_tracks(&w.tracks, &pairing).unwrap();
        for o in set.observations_mut() {
            o.obs.u.x += rng.sample(noise);
            o.obs.u.y += rng.sample(noise);
        }
        let geom = SceneGeometry::new(&w.calib, &w.kin, Shutter::Rolling);
        let full = assemble(&set, &geom, &Default::default()).unwrap();
        let expected = dense_reduced_minimizer(full.s(), &full.p_dense());
        let est = solve_ls(&reduce(full).unwrap()).unwrap();
        let rel = (est.params.clone() - expected.rows(0, 6)).norm() / expected.rows(0, 6).norm();
        worst = worst.max(rel);
    }
    assert!(worst < 1e-9, "worst relative difference {worst:e}");
}
