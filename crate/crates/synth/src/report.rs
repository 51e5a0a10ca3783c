//! CSV output of Monte-Carlo runs.
//!
//! Plot-data files have one row per noise level and, for every series, the
//! columns `<label>_eps_v`, `<label>_eps_v_std`, `<label>_pred_std_v`,
//! `<label>_eps_g`, `<label>_eps_g_std`, `<label>_pred_std_g`, so with
//! gnuplot:
//!
//! ```text
//! set datafile separator ","
//! plot for [c in "2 8 14"] "fig4.csv" using 1:int(c):int(c)+1 with yerrorlines title columnhead(int(c))
//! ```

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rsvio_core::estimators::Method;

use crate::montecarlo::{Aggregate, MonteCarloReport, TrialResult};
use crate::Result;

pub const TRIAL_HEADER: [&str; 15] = [
    "sigma",
    "window",
    "trial",
    "method",
    "eps_v",
    "eps_g",
    "iters",
    "sigma_hat",
    "pred_std_v",
    "pred_std_g",
    "pred_std_v_corr",
    "pred_std_g_corr",
    "converged",
    "pairs_used",
    "failure",
];

pub const AGGREGATE_HEADER: [&str; 17] = [
    "sigma",
    "method",
    "n_ok",
    "n_failed",
    "mean_eps_v",
    "std_eps_v",
    "mean_eps_g",
    "std_eps_g",
    "median_iters",
    "median_sigma_hat",
    "mean_pred_std_v",
    "mean_pred_std_g",
    "mean_pred_std_v_corr",
    "mean_pred_std_g_corr",
    "emp_std_v",
    "emp_std_g",
    "converged_fraction",
];

fn num(x: f64) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:e}")
    }
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

fn trial_record(t: &TrialResult) -> Vec<String> {
    vec![
        format!("{}", t.sigma),
        t.window.to_string(),
        t.trial.to_string(),
        t.method.to_string(),
        num(t.eps_v),
        num(t.eps_g),
        t.iters.to_string(),
        opt(t.sigma_hat),
        opt(t.pred_std_v),
        opt(t.pred_std_g),
        opt(t.pred_std_v_corr),
        opt(t.pred_std_g_corr),
        t.converged.to_string(),
        t.pairs_used.to_string(),
        t.failure.clone().unwrap_or_default(),
    ]
}

fn aggregate_record(a: &Aggregate) -> Vec<String> {
    vec![
        format!("{}", a.sigma),
        a.method.to_string(),
        a.n_ok.to_string(),
        a.n_failed.to_string(),
        num(a.mean_eps_v),
        num(a.std_eps_v),
        num(a.mean_eps_g),
        num(a.std_eps_g),
        num(a.median_iters),
        opt(a.median_sigma_hat),
        opt(a.mean_pred_std_v),
        opt(a.mean_pred_std_g),
        opt(a.mean_pred_std_v_corr),
        opt(a.mean_pred_std_g_corr),
        num(a.emp_std_v),
        num(a.emp_std_g),
        format!("{}", a.converged_fraction),
    ]
}

pub fn write_trials_csv<W: Write>(out: W, report: &MonteCarloReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(TRIAL_HEADER)?;
    for t in &report.trials {
        w.write_record(trial_record(t))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregate_csv<W: Write>(out: W, report: &MonteCarloReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for a in &report.aggregates {
        w.write_record(aggregate_record(a))?;
    }
    w.flush()?;
    Ok(())
}

/// One curve family of a figure: a labelled run and the methods to plot.
pub struct Series<'a> {
    pub label: String,
    pub report: &'a MonteCarloReport,
    pub methods: Vec<Method>,
}

pub fn write_plot_data<W: Write>(out: W, series: &[Series<'_>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["sigma".to_string()];
    for s in series {
        for m in &s.methods {
            let p = if s.label.is_empty() {
                m.to_string()
            } else {
                format!("{}_{m}", s.label)
            };
            for col in ["eps_v", "eps_v_std", "pred_std_v", "eps_g", "eps_g_std", "pred_std_g"] {
                header.push(format!("{p}_{col}"));
            }
        }
    }
    w.write_record(&header)?;
    let sigmas = series.first().map(|s| s.report.sigmas.clone()).unwrap_or_default();
    for sigma in sigmas {
        let mut row = vec![format!("{sigma}")];
        for s in series {
            for &m in &s.methods {
                match s.report.aggregate(sigma, m) {
                    Some(a) => row.extend([
                        num(a.mean_eps_v),
                        num(a.std_eps_v),
                        opt(a.mean_pred_std_v),
                        num(a.mean_eps_g),
                        num(a.std_eps_g),
                        opt(a.mean_pred_std_g),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 6)),
                }
            }
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

pub fn save_trials_csv(path: &Path, report: &MonteCarloReport) -> Result<()> {
    write_trials_csv(create(path)?, report)
}

pub fn save_aggregate_csv(path: &Path, report: &MonteCarloReport) -> Result<()> {
    write_aggregate_csv(create(path)?, report)
}

pub fn save_plot_data(path: &Path, series: &[Series<'_>]) -> Result<()> {
    write_plot_data(create(path)?, series)
}
