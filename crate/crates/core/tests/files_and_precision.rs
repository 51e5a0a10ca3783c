mod common;

use rsvio_core::estimators::{solve_ls, solve_renorm, RenormOptions};
use rsvio_core::geometry::{IntegrationMode, ScanlineKinematics, SceneGeometry, Shutter};
use rsvio_core::io::{self, TrackFile};
use rsvio_core::noise::{propagate_all, PointNoiseModel};
use rsvio_core::scalar::to_f64;
use rsvio_core::system::{assemble, make_pairing, reduce, CorrespondenceSet, PairingMode};
use rsvio_core::Scalar;

fn scratch_dir(name: &str) -> std::path::PathBuf {
    let dir = std::env::temp_dir().join(format!("rsvio-core-{name}-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

/// Loads the three input files at precision `T` and solves with LS and renormalization.
fn solve_from_files<T: Scalar>(dir: &std::path::Path) -> (nalgebra::Vector3<f64>, nalgebra::Vector3<f64>, nalgebra::Vector3<f64>) {
    let calib = io::load_calibration_json::<T>(dir.join("calib.json")).unwrap();
    let raw = io::load_imu_csv::<T>(dir.join("imu.csv")).unwrap();
    let tracks = io::load_tracks_json::<T>(dir.join("tracks.json")).unwrap();
    let frames = 1 + tracks.tracks.iter().flatten().map(|o| o.frame).max().unwrap();
    let count = calib.clock(Shutter::Rolling).last_index_of_frame(frames - 1) + 1;
    let kin = ScanlineKinematics::from_raw(&raw, calib.readout_per_line, count, IntegrationMode::InterpolateThenIntegrate).unwrap();
    let geom = SceneGeometry::new(&calib, &kin, Shutter::Rolling);
    let set = CorrespondenceSet::from_tracks(&tracks.tracks, &make_pairing(frames, tracks.pairing).unwrap()).unwrap();
    let reduced = reduce(assemble(&set, &geom, &Default::default()).unwrap()).unwrap();
    let ls = solve_ls(&reduced).unwrap();
    let covs = propagate_all(&reduced, &PointNoiseModel::identity());
    let rn = solve_renorm(&reduced, &covs, &RenormOptions::default()).unwrap();
    let f = |v: &nalgebra::Vector3<T>| nalgebra::Vector3::new(to_f64(v.x), to_f64(v.y), to_f64(v.z));
    (f(&ls.v0), f(&rn.v0), f(&rn.g0))
}

#[test]
fn files_round_trip_into_both_precisions() {
    let w = common::world(4000, 4, 20);
    let dir = scratch_dir("round-trip");
    io::save_calibration_json(&w.calib, dir.join("calib.json")).unwrap();
    io::save_imu_csv(&w.raw, dir.join("imu.csv")).unwrap();
    let file = TrackFile {
        pairing: PairingMode::StereoDense,
        tracks: w.tracks.clone(),
    };
    io::save_tracks_json(&file, dir.join("tracks.json")).unwrap();

    let (ls, rn_v, rn_g) = solve_from_files::<f64>(&dir);
    assert!((ls - w.v0).norm() < 1e-8, "{}", (ls - w.v0).norm());
    assert!((rn_v - w.v0).norm() < 1e-8);
    assert!((rn_g - w.g0).norm() < 1e-7);

    // Single precision loses digits but lands on the same solution.
    let (ls, rn_v, rn_g) = solve_from_files::<f32>(&dir);
    assert!((ls - w.v0).norm() < 2e-2, "f32 LS velocity error {}", (ls - w.v0).norm());
    assert!((rn_v - w.v0).norm() < 2e-2);
    assert!(rn_g.angle(&w.g0).to_degrees() < 1.0);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn missing_file_is_an_io_error() {
    let dir = scratch_dir("missing");
    let err = io::load_imu_csv::<f64>(dir.join("absent.csv")).unwrap_err();
    assert!(matches!(err, rsvio_core::Error::Io(_)));
    std::fs::remove_dir_all(dir).ok();
}
