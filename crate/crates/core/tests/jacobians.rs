mod common;

use nalgebra::{DMatrix, Vector2, Vector3};
use rsvio_core::ba::{reproject, reprojection_jacobians};
use rsvio_core::geometry::{SceneGeometry, Shutter};
use rsvio_core::noise::full_jacobian;
use rsvio_core::system::{assemble, make_pairing, reduce, CorrespondenceSet, PairingMode, ReducedSystem};

fn rows_of(reduced: &ReducedSystem<f64>, alpha: usize) -> [nalgebra::DVector<f64>; 3] {
    [0, 1, 2].map(|s| reduced.row(alpha, s))
}

fn close(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> bool {
    (analytic - numeric).norm() <= 1e-5 * numeric.norm().max(1e-3)
}

#[test]
fn pair_row_jacobians_match_central_differences() {
    let h = 1e-4;
    for seed in 0..100u64 {
        let w = common::world(2000 + seed, 3, 5);
        let geom = SceneGeometry::new(&w.calib, &w.kin, Shutter::Rolling);
        let pairing = make_pairing(3, PairingMode::StereoDense).unwrap();
        let set = CorrespondenceSet::from_tracks(&w.tracks, &pairing).unwrap();
        let build = |set: &CorrespondenceSet<f64>| reduce(assemble(set, &geom, &Default::default()).unwrap()).unwrap();
        let reduced = build(&set);
        let alpha = seed as usize % reduced.n_pairs();
        let analytic = full_jacobian(&reduced, alpha);
        let pair = set.pairs()[alpha];
        for (side, obs) in [pair.a, pair.b].into_iter().enumerate() {
            for k in 0..2 {
                let shifted = |d: f64| {
                    let mut s = set.clone();
                    s.observations_mut()[obs].obs.u[k] += d;
                    rows_of(&build(&s), alpha)
                };
                let (plus, minus) = (shifted(h), shifted(-h));
                for s in 0..3 {
                    let fd = (&plus[s] - &minus[s]) / (2.0 * h);
                    let a = analytic[s].column(2 * side + k).into_owned();
                    let (a, fd) = (DMatrix::from_column_slice(a.len(), 1, a.as_slice()), DMatrix::from_column_slice(fd.len(), 1, fd.as_slice()));
                    assert!(close(&a, &fd), "seed {seed} side {side} component {k} row {s}");
                }
            }
        }
    }
}

#[test]
fn reprojection_jacobians_match_central_differences() {
    let h = 1e-6;
    for seed in 0..100u64 {
        let w = common::world(3000 + seed, 2, 1);
        let geom = SceneGeometry::new(&w.calib, &w.kin, Shutter::Rolling);
        let obs = &w.tracks[0][seed as usize % 4];
        let x = w.points[0] + Vector3::new(0.02, -0.01, 0.03);
        let v0 = w.v0 + Vector3::new(0.1, 0.0, -0.05);
        let g0 = w.g0 + Vector3::new(0.0, 0.2, 0.1);
        let (ja, jx) = reprojection_jacobians(&x, &v0, &g0, obs, &geom).unwrap();
        let f = |x: Vector3<f64>, v0: Vector3<f64>, g0: Vector3<f64>| -> Vector2<f64> { reproject(&x, &v0, &g0, obs, &geom).unwrap() };
        let mut num_a = DMatrix::zeros(2, 6);
        let mut num_x = DMatrix::zeros(2, 3);
        for k in 0..3 {
            let e = Vector3::ith(k, h);
            num_a.set_column(k, &((f(x, v0 + e, g0) - f(x, v0 - e, g0)) / (2.0 * h)));
            num_a.set_column(k + 3, &((f(x, v0, g0 + e) - f(x, v0, g0 - e)) / (2.0 * h)));
            num_x.set_column(k, &((f(x + e, v0, g0) - f(x - e, v0, g0)) / (2.0 * h)));
        }
        let ja = DMatrix::from_column_slice(2, 6, ja.as_slice());
        let jx = DMatrix::from_column_slice(2, 3, jx.as_slice());
        assert!(close(&ja, &num_a), "seed {seed}: motion Jacobian");
        assert!(close(&jx, &num_x), "seed {seed}: point Jacobian");
    }
}
