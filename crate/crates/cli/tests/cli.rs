use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn rsvio(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rsvio"))
        .args(args)
        .env_remove("RSVIO_LOG")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = rsvio(args);
    assert!(
        out.status.success(),
        "rsvio {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn vec3(v: &Value) -> [f64; 3] {
    let a = v.as_array().unwrap();
    [0, 1, 2].map(|i| a[i].as_f64().unwrap())
}

fn dist(a: [f64; 3], b: [f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum::<f64>().sqrt()
}

#[test]
fn noiseless_dataset_is_solved_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let est = dir.path().join("est");
    ok(&["simulate", "--no-imu-noise", "--seed", "3", "--out", p(&data)]);
    for f in ["imu.csv", "tracks.json", "calib.json", "gt.json"] {
        assert!(data.join(f).exists(), "{f}");
    }
    ok(&["solve", "--data", p(&data), "--method", "ls,renorm", "--out", p(&est)]);
    let gt = read_json(&data.join("gt.json"));
    let estimates = read_json(&est.join("estimate.json"));
    for e in estimates.as_array().unwrap() {
        assert!(dist(vec3(&e["v0"]), vec3(&gt["v0"])) < 1e-6, "{e}");
        assert!(dist(vec3(&e["g0"]), vec3(&gt["g0"])) < 1e-5, "{e}");
    }
}

#[test]
fn simulate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    ok(&["simulate", "--sigma", "0.3", "--seed", "11", "--out", p(&a)]);
    ok(&["simulate", "--sigma", "0.3", "--seed", "11", "--out", p(&b)]);
    ok(&["simulate", "--sigma", "0.3", "--seed", "12", "--out", p(&c)]);
    for f in ["imu.csv", "tracks.json", "calib.json", "gt.json"] {
        let x = std::fs::read(a.join(f)).unwrap();
        assert_eq!(x, std::fs::read(b.join(f)).unwrap(), "{f}");
    }
    assert_ne!(
        std::fs::read(a.join("tracks.json")).unwrap(),
        std::fs::read(c.join("tracks.json")).unwrap()
    );
}

#[test]
fn several_methods_give_an_array_and_a_trace() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--sigma", "0.2", "--out", p(&data)]);
    let stdout = ok(&["solve", "--data", p(&data), "--method", "ls,renorm,ba", "--trace", "--out", p(dir.path())]);
    assert!(stdout.contains("renorm"));
    let v = read_json(&dir.path().join("estimate.json"));
    let methods: Vec<&str> = v.as_array().unwrap().iter().map(|e| e["method"].as_str().unwrap()).collect();
    assert_eq!(methods, ["ls", "renorm", "ba"]);
    let trace = std::fs::read_to_string(dir.path().join("ba_trace.csv")).unwrap();
    assert!(trace.starts_with("iteration,cost,damping,accepted"));
    assert!(trace.lines().count() >= 2);

    // A single method gives a single object.
    let one = dir.path().join("one");
    ok(&["solve", "--data", p(&data), "--out", p(&one)]);
    let v = read_json(&one.join("estimate.json"));
    assert_eq!(v["method"], "renorm");
    assert!(v["sigma_hat"].as_f64().unwrap() > 0.0);
}

#[test]
fn too_few_correspondences_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--out", p(&data)]);
    let tracks = dir.path().join("empty.json");
    std::fs::write(&tracks, r#"{"pairing":"stereo-dense","tracks":[]}"#).unwrap();
    let out = rsvio(&[
        "solve",
        "--imu",
        p(&data.join("imu.csv")),
        "--calib",
        p(&data.join("calib.json")),
        "--tracks",
        p(&tracks),
        "--out",
        p(dir.path()),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("need ≥ 6 correspondences"));
}

#[test]
fn malformed_input_names_the_location() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--out", p(&data)]);
    let tracks = dir.path().join("bad.json");
    std::fs::write(&tracks, "{\"pairing\": \"stereo-dense\",\n \"tracks\": [[{]]}").unwrap();
    let args = |t: &Path, i: &Path| {
        rsvio(&[
            "solve",
            "--imu",
            p(i),
            "--calib",
            p(&data.join("calib.json")),
            "--tracks",
            p(t),
            "--out",
            p(dir.path()),
        ])
    };
    let out = args(&tracks, &data.join("imu.csv"));
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 2"), "{err}");
    assert!(err.contains("column"), "{err}");

    let imu = dir.path().join("bad.csv");
    std::fs::write(&imu, "t,wx,wy,wz,ax,ay,az\n0,0,0,0,0,0,0\n1e-3,0,zero,0,0,0,0\n").unwrap();
    let out = args(&data.join("tracks.json"), &imu);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn unknown_method_is_a_usage_error() {
    let out = rsvio(&["solve", "--data", ".", "--method", "magic"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("magic"));
}

fn aggregate_rows(path: &Path) -> Vec<(String, String)> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.records()
        .map(|x| {
            let x = x.unwrap();
            (x[0].to_string(), x[1].to_string())
        })
        .collect()
}

#[test]
fn figure_presets_cover_their_grids() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["benchmark", "--preset", "paper-fig3", "--trials", "2", "--out", p(dir.path())]);
    let rows = aggregate_rows(&dir.path().join("fig3_aggregate.csv"));
    assert_eq!(rows.len(), 6 * 3);
    let sigmas: std::collections::BTreeSet<_> = rows.iter().map(|r| r.0.clone()).collect();
    assert_eq!(sigmas.len(), 6);
    assert!(dir.path().join("fig3.csv").exists());
    assert!(dir.path().join("fig3_trials.csv").exists());

    ok(&["benchmark", "--preset", "paper-fig4", "--trials", "2", "--sigma", "0.1", "--out", p(dir.path())]);
    let methods: Vec<String> = aggregate_rows(&dir.path().join("fig4_aggregate.csv")).into_iter().map(|r| r.1).collect();
    assert_eq!(methods, ["ls", "iter-reweight", "taubin", "renorm"]);
}

#[test]
fn two_arm_presets_write_one_file_per_arm() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["benchmark", "--preset", "paper-fig6", "--trials", "2", "--sigma", "0.1", "--out", p(dir.path())]);
    for f in ["fig6.csv", "fig6_stereo_aggregate.csv", "fig6_mono_aggregate.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let header = std::fs::read_to_string(dir.path().join("fig6.csv")).unwrap();
    assert!(header.starts_with("sigma,stereo_ls_eps_v"));
}

#[test]
fn ransac_benchmark_runs_with_outliers() {
    let dir = tempfile::tempdir().unwrap();
    ok(&[
        "benchmark",
        "--trials",
        "2",
        "--sigma",
        "0.3",
        "--outliers",
        "0.2",
        "--ransac",
        "--out",
        p(dir.path()),
    ]);
    let rows = aggregate_rows(&dir.path().join("forward_aggregate.csv"));
    assert_eq!(rows.len(), 2);
}

#[test]
fn compare_reports_errors_against_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    ok(&["simulate", "--sigma", "0.3", "--out", p(&data)]);
    ok(&["solve", "--data", p(&data), "--method", "ls,renorm", "--out", p(dir.path())]);
    let stdout = ok(&[
        "compare",
        "--gt",
        p(&data.join("gt.json")),
        "--estimate",
        p(&dir.path().join("estimate.json")),
        "--out",
        p(dir.path()),
    ]);
    assert!(stdout.contains("ls") && stdout.contains("renorm"));
    let mut r = csv::Reader::from_path(dir.path().join("compare.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 2);
    let ev: f64 = rows[1][2].parse().unwrap();
    assert!(ev > 0.0 && ev < 0.5, "{ev}");
}
