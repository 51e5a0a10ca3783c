//! Assemble, reduce and run a set of estimators on one correspondence set.

use std::collections::BTreeMap;

use rsvio_core::ba::{refine_lm, BaOutcome, BaProblem, LmOptions};
use rsvio_core::bias::{assemble_with_bias, BiasConfig, GyroBiasKinematics};
use rsvio_core::estimators::{solve_iter_reweight, solve_ls, solve_renorm, solve_taubin, InitEstimate, Method, RenormOptions};
use rsvio_core::geometry::{RigCalibration, SceneGeometry, ScanlineKinematics, Shutter};
use rsvio_core::noise::{propagate_all, PointNoiseModel};
use rsvio_core::system::{reduce, AssemblyOptions, CorrespondenceSet};
use rsvio_core::Error;

#[derive(Clone, Debug)]
pub struct SolveOptions {
    pub methods: Vec<Method>,
    pub shutter: Shutter,
    pub bias: BiasConfig<f64>,
    pub renorm: RenormOptions<f64>,
    pub lm: LmOptions<f64>,
    /// Linear estimate bundle adjustment starts from.
    pub ba_init: Method,
    pub assembly: AssemblyOptions,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            methods: vec![Method::Renorm],
            shutter: Shutter::Rolling,
            bias: BiasConfig::off(),
            renorm: RenormOptions::default(),
            lm: LmOptions::default(),
            ba_init: Method::Ls,
            assembly: AssemblyOptions::default(),
        }
    }
}

/// Result of one estimator.
#[derive(Debug)]
pub struct MethodResult {
    pub method: Method,
    pub estimate: rsvio_core::Result<InitEstimate<f64>>,
    /// LM record when the method is bundle adjustment.
    pub ba: Option<BaOutcome<f64>>,
}

/// Runs every requested method on `set`. `kin` must already reflect any known
/// bias correction; `gyro` is needed when the gyro bias is modeled.
///
/// Failures shared by all methods (assembly, reduction) are returned as the
/// outer error; per-method failures are kept per entry.
pub fn solve(
    set: &CorrespondenceSet<f64>,
    calib: &RigCalibration<f64>,
    kin: &ScanlineKinematics<f64>,
    gyro: Option<&GyroBiasKinematics<f64>>,
    opts: &SolveOptions,
) -> rsvio_core::Result<Vec<MethodResult>> {
    let geom = SceneGeometry::new(calib, kin, opts.shutter);
    let full = assemble_with_bias(set, &geom, &opts.assembly, &opts.bias, gyro)?;
    let reduced = reduce(full)?;

    let needs_covs = opts
        .methods
        .iter()
        .any(|m| matches!(m, Method::Taubin | Method::IterReweight | Method::Renorm))
        || (opts.methods.contains(&Method::Ba) && opts.ba_init != Method::Ls);
    let covs = needs_covs.then(|| propagate_all(&reduced, &PointNoiseModel::identity()));

    let linear = |m: Method| -> rsvio_core::Result<InitEstimate<f64>> {
        match m {
            Method::Ls => solve_ls(&reduced),
            Method::Taubin => solve_taubin(&reduced, covs.as_ref().expect("covariances computed")),
            Method::IterReweight => solve_iter_reweight(&reduced, covs.as_ref().expect("covariances computed"), &opts.renorm),
            Method::Renorm => solve_renorm(&reduced, covs.as_ref().expect("covariances computed"), &opts.renorm),
            Method::Ba => Err(Error::InvalidInput("bundle adjustment needs a linear initializer".into())),
        }
    };

    let mut linear_results: BTreeMap<Method, rsvio_core::Result<InitEstimate<f64>>> = BTreeMap::new();
    for &m in &opts.methods {
        let m = if m == Method::Ba { opts.ba_init } else { m };
        if !linear_results.contains_key(&m) {
            linear_results.insert(m, linear(m));
        }
    }

    let mut ba = opts.methods.contains(&Method::Ba).then(|| match &linear_results[&opts.ba_init] {
        Ok(init) => BaProblem::from_linear(&reduced, set.observations(), &geom, init).and_then(|mut p| refine_lm(&mut p, &opts.lm)),
        Err(e) => Err(Error::InvalidInput(format!("{} initializer failed: {e}", opts.ba_init))),
    });

    let mut out = Vec::with_capacity(opts.methods.len());
    for &method in &opts.methods {
        if method == Method::Ba {
            match ba.take().unwrap_or_else(|| Err(Error::InvalidInput("bundle adjustment requested twice".into()))) {
                Ok(outcome) => out.push(MethodResult {
                    method,
                    estimate: Ok(outcome.estimate.clone()),
                    ba: Some(outcome),
                }),
                Err(e) => out.push(MethodResult {
                    method,
                    estimate: Err(e),
                    ba: None,
                }),
            }
        } else {
            let estimate = linear_results
                .remove(&method)
                .unwrap_or_else(|| Err(Error::InvalidInput(format!("{method} requested twice"))));
            out.push(MethodResult { method, estimate, ba: None });
        }
    }
    Ok(out)
}
