//! Labelled gross outliers through the pruning stage.

use rsvio_core::geometry::{SceneGeometry, Shutter};
use rsvio_synth::{generate_scenario, perturb, ransac_prune, NoiseSpec, RansacOptions, ScenarioConfig, TrajectorySpec};

#[test]
fn twenty_percent_outliers_over_a_hundred_trials() {
    let cfg = ScenarioConfig {
        accel_noise: 0.0,
        rot_noise_deg: 0.0,
        ..ScenarioConfig::default()
    };
    let sigma = 0.3;
    let s = generate_scenario(&TrajectorySpec::forward(), &cfg).unwrap();
    let noise = NoiseSpec {
        outlier_ratio: 0.2,
        ..NoiseSpec::from_config(&cfg, sigma)
    };
    let (mut kept_in, mut total_in, mut kept_out, mut total_out) = (0usize, 0usize, 0usize, 0usize);
    for trial in 0..100 {
        let wi = trial % s.windows.len();
        let w = &s.windows[wi];
        let n = perturb(&s, wi, &noise, 1000 + trial as u64).unwrap();
        let kin = n.kinematics(&n.imu, cfg.readout_per_line, w.scanlines).unwrap();
        let geom = SceneGeometry::new(&s.calib, &kin, Shutter::Rolling);
        let opts = RansacOptions {
            sigma_assumed: sigma,
            seed: trial as u64,
            ..RansacOptions::default()
        };
        let out = ransac_prune(&n.set, &geom, &opts).unwrap();
        for &k in &out.inliers {
            if n.outlier_pairs[k] {
                kept_out += 1;
            } else {
                kept_in += 1;
            }
        }
        total_out += n.outlier_pairs.iter().filter(|&&o| o).count();
        total_in += n.outlier_pairs.iter().filter(|&&o| !o).count();
    }
    let retained = kept_in as f64 / total_in as f64;
    let rejected = 1.0 - kept_out as f64 / total_out as f64;
    println!("inliers retained {retained:.4}, outliers rejected {rejected:.4}");
    assert!(rejected >= 0.95, "outliers rejected {rejected:.4}");
    assert!(retained >= 0.95, "inliers retained {retained:.4}");
}
