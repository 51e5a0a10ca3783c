//! Monte-Carlo driver: perturb, solve with every method, score.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;
use rsvio_core::bias::{BiasConfig, GyroBiasKinematics};
use rsvio_core::estimators::{InitEstimate, Method};
use serde::Serialize;

use crate::metrics::{direction_variance, error_metrics};
use crate::perturb::{perturb, NoiseSpec};
use crate::pipeline::{solve, SolveOptions};
use crate::ransac::{ransac_prune, RansacOptions};
use crate::scenario::{generate_scenario, Scenario};
use crate::trajectory::TrajectorySpec;
use crate::Result;

/// Outcome of one method on one noisy realization.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrialResult {
    pub sigma: f64,
    pub window: usize,
    pub trial: usize,
    pub method: Method,
    /// `‖v0 − v0_gt‖` (m/s). NaN on failure.
    pub eps_v: f64,
    /// Angle between `g0` and `g0_gt` (deg). NaN on failure.
    pub eps_g: f64,
    pub iters: usize,
    pub sigma_hat: Option<f64>,
    /// `sqrt(trace Σ_v)` from the independent-rows covariance.
    pub pred_std_v: Option<f64>,
    /// Predicted gravity direction spread (deg), same covariance.
    pub pred_std_g: Option<f64>,
    pub pred_std_v_corr: Option<f64>,
    pub pred_std_g_corr: Option<f64>,
    /// `[v0 − v0_gt; g0 − g0_gt]`.
    pub error: [f64; 6],
    /// Diagonal of the `[v0; g0]` covariance.
    pub pred_var: Option<[f64; 6]>,
    pub pred_var_corr: Option<[f64; 6]>,
    pub converged: bool,
    /// Pairs left after RANSAC, or all pairs.
    pub pairs_used: usize,
    pub failure: Option<String>,
}

impl TrialResult {
    pub fn ok(&self) -> bool {
        self.failure.is_none()
    }
}

/// Statistics of one method at one noise level.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub sigma: f64,
    pub method: Method,
    pub n_ok: usize,
    pub n_failed: usize,
    pub mean_eps_v: f64,
    pub std_eps_v: f64,
    pub mean_eps_g: f64,
    pub std_eps_g: f64,
    pub median_iters: f64,
    pub median_sigma_hat: Option<f64>,
    pub mean_pred_std_v: Option<f64>,
    pub mean_pred_std_g: Option<f64>,
    pub mean_pred_std_v_corr: Option<f64>,
    pub mean_pred_std_g_corr: Option<f64>,
    /// Velocity error spread about each window's mean, pooled over windows.
    pub emp_std_v: f64,
    /// RMS gravity direction error (deg).
    pub emp_std_g: f64,
    /// Per component of `[v0; g0]`: predicted over empirical std, both
    /// pooled within windows.
    pub std_ratio: Option<[f64; 6]>,
    pub std_ratio_corr: Option<[f64; 6]>,
    pub converged_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct MonteCarloReport {
    pub methods: Vec<Method>,
    pub sigmas: Vec<f64>,
    pub trials: Vec<TrialResult>,
    pub aggregates: Vec<Aggregate>,
}

impl MonteCarloReport {
    pub fn aggregate(&self, sigma: f64, method: Method) -> Option<&Aggregate> {
        self.aggregates
            .iter()
            .find(|a| a.method == method && (a.sigma - sigma).abs() < 1e-12)
    }

    pub fn trials_of(&self, sigma: f64, method: Method) -> impl Iterator<Item = &TrialResult> {
        self.trials
            .iter()
            .filter(move |t| t.method == method && (t.sigma - sigma).abs() < 1e-12)
    }
}

/// Knobs of the driver that are not part of the scenario.
#[derive(Clone, Debug)]
pub struct MonteCarloOptions {
    pub solve: SolveOptions,
    pub ransac: RansacOptions,
}

impl Default for MonteCarloOptions {
    fn default() -> Self {
        Self {
            solve: SolveOptions::default(),
            ransac: RansacOptions::default(),
        }
    }
}

/// Generates the scenario and runs the experiment.
pub fn simulate_and_run(traj: &TrajectorySpec, cfg: &crate::ScenarioConfig, methods: &[Method]) -> Result<MonteCarloReport> {
    let scenario = generate_scenario(traj, cfg)?;
    run_monte_carlo(&scenario, methods, &MonteCarloOptions::default())
}

/// Runs `n_trials` realizations per noise level. Trial `k` uses window
/// `k mod windows`, so the realizations slide along the trajectory. Every
/// method sees the same realization, and a trial's noise depends only on the
/// seed, the noise level index and the trial index.
///
/// `opts.solve.methods`, `shutter` and `bias` are overridden from `methods`
/// and the scenario config.
pub fn run_monte_carlo(scenario: &Scenario, methods: &[Method], opts: &MonteCarloOptions) -> Result<MonteCarloReport> {
    let cfg = &scenario.config;
    cfg.validate()?;
    let mut solve_opts = opts.solve.clone();
    solve_opts.methods = methods.to_vec();
    solve_opts.shutter = cfg.shutter.solver_shutter();
    solve_opts.bias = BiasConfig {
        model_accel: cfg.model_accel_bias,
        model_gyro: cfg.model_gyro_bias,
        accel: None,
        gyro: None,
    };

    let tasks: Vec<(usize, usize)> = (0..cfg.sigma_px.len())
        .flat_map(|s| (0..cfg.n_trials).map(move |t| (s, t)))
        .collect();
    let start = Instant::now();
    let per_task: Vec<Vec<TrialResult>> = tasks
        .par_iter()
        .map(|&(s, t)| run_trial(scenario, s, t, &solve_opts, &opts.ransac))
        .collect::<Result<_>>()?;
    log::info!(
        "{} realizations x {} methods in {:.2?}",
        tasks.len(),
        methods.len(),
        start.elapsed()
    );
    let trials: Vec<TrialResult> = per_task.into_iter().flatten().collect();

    let mut aggregates = Vec::new();
    for &sigma in &cfg.sigma_px {
        for &method in methods {
            let rows: Vec<&TrialResult> = trials
                .iter()
                .filter(|t| t.method == method && t.sigma == sigma)
                .collect();
            aggregates.push(aggregate(sigma, method, &rows));
        }
    }
    Ok(MonteCarloReport {
        methods: methods.to_vec(),
        sigmas: cfg.sigma_px.clone(),
        trials,
        aggregates,
    })
}

/// Seed of realization `trial` at noise level `sigma_index`.
pub fn trial_seed(seed: u64, sigma_index: usize, trial: usize) -> u64 {
    let mut z = seed
        .wrapping_add((sigma_index as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((trial as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn run_trial(
    scenario: &Scenario,
    s: usize,
    trial: usize,
    solve_opts: &SolveOptions,
    ransac_opts: &RansacOptions,
) -> Result<Vec<TrialResult>> {
    let cfg = &scenario.config;
    let sigma = cfg.sigma_px[s];
    let window = trial % scenario.windows.len();
    let w = &scenario.windows[window];
    let seed = trial_seed(cfg.seed, s, trial);
    let noisy = perturb(scenario, window, &NoiseSpec::from_config(cfg, sigma), seed)?;
    let kin = noisy.kinematics(&noisy.imu, cfg.readout_per_line, w.scanlines)?;
    let gyro = if cfg.model_gyro_bias {
        Some(GyroBiasKinematics::from_raw(&noisy.imu, cfg.readout_per_line, w.scanlines)?)
    } else {
        None
    };

    let failed = |method: Method, pairs: usize, msg: String| TrialResult {
        sigma,
        window,
        trial,
        method,
        eps_v: f64::NAN,
        eps_g: f64::NAN,
        iters: 0,
        sigma_hat: None,
        pred_std_v: None,
        pred_std_g: None,
        pred_std_v_corr: None,
        pred_std_g_corr: None,
        error: [f64::NAN; 6],
        pred_var: None,
        pred_var_corr: None,
        converged: false,
        pairs_used: pairs,
        failure: Some(msg),
    };

    let set = if cfg.ransac {
        let geom = rsvio_core::geometry::SceneGeometry::new(&scenario.calib, &kin, solve_opts.shutter);
        let opts = RansacOptions {
            sigma_assumed: sigma,
            seed: seed ^ 0x5DEE_CE66_D,
            ..*ransac_opts
        };
        match ransac_prune(&noisy.set, &geom, &opts) {
            Ok(out) => out.set,
            Err(e) => {
                let n = noisy.set.pairs().len();
                return Ok(solve_opts.methods.iter().map(|&m| failed(m, n, e.to_string())).collect());
            }
        }
    } else {
        noisy.set
    };
    let pairs = set.pairs().len();

    let results = match solve(&set, &scenario.calib, &kin, gyro.as_ref(), solve_opts) {
        Ok(r) => r,
        Err(e) => return Ok(solve_opts.methods.iter().map(|&m| failed(m, pairs, e.to_string())).collect()),
    };
    Ok(results
        .into_iter()
        .map(|r| match r.estimate {
            Ok(est) => score(&est, w.v0, w.g0, sigma, window, trial, pairs)
                .unwrap_or_else(|e| failed(r.method, pairs, e.to_string())),
            Err(e) => failed(r.method, pairs, e.to_string()),
        })
        .collect())
}

fn score(
    est: &InitEstimate<f64>,
    v0_gt: Vector3<f64>,
    g0_gt: Vector3<f64>,
    sigma: f64,
    window: usize,
    trial: usize,
    pairs_used: usize,
) -> Result<TrialResult> {
    let (eps_v, eps_g) = error_metrics(&est.v0, &est.g0, &v0_gt, &g0_gt)?;
    let dv = est.v0 - v0_gt;
    let dg = est.g0 - g0_gt;
    let stds = |cov: &Option<nalgebra::DMatrix<f64>>| {
        cov.as_ref().map(|c| {
            let cv: Matrix3<f64> = c.fixed_view::<3, 3>(0, 0).into_owned();
            let cg: Matrix3<f64> = c.fixed_view::<3, 3>(3, 3).into_owned();
            let var: [f64; 6] = std::array::from_fn(|k| c[(k, k)]);
            (
                cv.trace().max(0.0).sqrt(),
                direction_variance(&est.g0, &cg).max(0.0).sqrt().to_degrees(),
                var,
            )
        })
    };
    let indep = stds(&est.cov);
    let corr = stds(&est.cov_correlated);
    Ok(TrialResult {
        sigma,
        window,
        trial,
        method: est.method,
        eps_v,
        eps_g,
        iters: est.iterations,
        sigma_hat: est.sigma_hat,
        pred_std_v: indep.map(|x| x.0),
        pred_std_g: indep.map(|x| x.1),
        pred_std_v_corr: corr.map(|x| x.0),
        pred_std_g_corr: corr.map(|x| x.1),
        error: [dv.x, dv.y, dv.z, dg.x, dg.y, dg.z],
        pred_var: indep.map(|x| x.2),
        pred_var_corr: corr.map(|x| x.2),
        converged: est.converged,
        pairs_used,
        failure: None,
    })
}

fn mean(xs: impl IntoIterator<Item = f64>) -> Option<f64> {
    let (s, n) = xs.into_iter().fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    (n > 0).then(|| s / n as f64)
}

fn std_dev(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

pub(crate) fn median(mut xs: Vec<f64>) -> Option<f64> {
    if xs.is_empty() {
        return None;
    }
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    Some(if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    })
}

/// Per-component variance about each window's mean, pooled over windows.
fn pooled_variance(rows: &[&TrialResult]) -> Option<[f64; 6]> {
    let mut by_window: BTreeMap<usize, Vec<[f64; 6]>> = BTreeMap::new();
    for r in rows {
        by_window.entry(r.window).or_default().push(r.error);
    }
    let mut ss = [0.0; 6];
    let mut dof = 0usize;
    for errs in by_window.values() {
        if errs.len() < 2 {
            continue;
        }
        for (k, s) in ss.iter_mut().enumerate() {
            let m = errs.iter().map(|e| e[k]).sum::<f64>() / errs.len() as f64;
            *s += errs.iter().map(|e| (e[k] - m).powi(2)).sum::<f64>();
        }
        dof += errs.len() - 1;
    }
    (dof > 0).then(|| ss.map(|s| s / dof as f64))
}

fn aggregate(sigma: f64, method: Method, rows: &[&TrialResult]) -> Aggregate {
    let ok: Vec<&TrialResult> = rows.iter().copied().filter(|r| r.ok()).collect();
    let ev: Vec<f64> = ok.iter().map(|r| r.eps_v).collect();
    let eg: Vec<f64> = ok.iter().map(|r| r.eps_g).collect();
    let opt_mean = |f: &dyn Fn(&TrialResult) -> Option<f64>| -> Option<f64> {
        let v: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
        if v.len() == ok.len() {
            mean(v)
        } else {
            None
        }
    };
    let pooled = pooled_variance(&ok);
    let ratio = |pick: &dyn Fn(&TrialResult) -> Option<[f64; 6]>| -> Option<[f64; 6]> {
        let emp = pooled?;
        let preds: Vec<[f64; 6]> = ok.iter().filter_map(|r| pick(r)).collect();
        if preds.is_empty() || preds.len() != ok.len() {
            return None;
        }
        Some(std::array::from_fn(|k| {
            let p = preds.iter().map(|v| v[k]).sum::<f64>() / preds.len() as f64;
            (p / emp[k]).sqrt()
        }))
    };
    Aggregate {
        sigma,
        method,
        n_ok: ok.len(),
        n_failed: rows.len() - ok.len(),
        mean_eps_v: mean(ev.iter().copied()).unwrap_or(f64::NAN),
        std_eps_v: std_dev(&ev),
        mean_eps_g: mean(eg.iter().copied()).unwrap_or(f64::NAN),
        std_eps_g: std_dev(&eg),
        median_iters: median(ok.iter().map(|r| r.iters as f64).collect()).unwrap_or(f64::NAN),
        median_sigma_hat: median(ok.iter().filter_map(|r| r.sigma_hat).collect()),
        mean_pred_std_v: opt_mean(&|r| r.pred_std_v),
        mean_pred_std_g: opt_mean(&|r| r.pred_std_g),
        mean_pred_std_v_corr: opt_mean(&|r| r.pred_std_v_corr),
        mean_pred_std_g_corr: opt_mean(&|r| r.pred_std_g_corr),
        emp_std_v: pooled.map_or(f64::NAN, |p| (p[0] + p[1] + p[2]).sqrt()),
        emp_std_g: mean(eg.iter().map(|e| e * e)).map_or(f64::NAN, f64::sqrt),
        std_ratio: ratio(&|r| r.pred_var),
        std_ratio_corr: ratio(&|r| r.pred_var_corr),
        converged_fraction: if rows.is_empty() {
            0.0
        } else {
            rows.iter().filter(|r| r.converged).count() as f64 / rows.len() as f64
        },
    }
}
