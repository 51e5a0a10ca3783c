use anyhow::{ensure, Context, Result};
use rsvio_synth::report::{save_aggregate_csv, save_plot_data, save_trials_csv, Series};
use rsvio_synth::{generate_scenario, run_monte_carlo, MonteCarloOptions, MonteCarloReport};

use crate::args::BenchmarkArgs;
use crate::scenario::experiment;

/// Runs every arm of the experiment and writes `<id>[_<arm>]_trials.csv`,
/// `<id>[_<arm>]_aggregate.csv` and the plot data `<id>.csv`.
pub fn run(args: &BenchmarkArgs) -> Result<()> {
    let mut exp = experiment(&args.scenario)?;
    if let Some(r) = args.outliers {
        ensure!((0.0..1.0).contains(&r), "--outliers must lie in [0, 1)");
    }
    exp = exp.map_configs(|c| {
        c.ransac |= args.ransac;
        if let Some(r) = args.outliers {
            c.outlier_ratio = r;
        }
    });
    let methods = if args.method.is_empty() {
        exp.methods.clone()
    } else {
        args.method.clone()
    };
    let id = if args.scenario.config.is_some() {
        "custom"
    } else {
        exp.preset.figure_id()
    };
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut reports: Vec<(String, MonteCarloReport)> = Vec::new();
    for v in &exp.variants {
        v.config.validate()?;
        let scenario = generate_scenario(&v.trajectory, &v.config)?;
        let report = run_monte_carlo(&scenario, &methods, &MonteCarloOptions::default())?;
        let stem = if v.label.is_empty() {
            id.to_string()
        } else {
            format!("{id}_{}", v.label)
        };
        save_trials_csv(&args.out.join(format!("{stem}_trials.csv")), &report)?;
        save_aggregate_csv(&args.out.join(format!("{stem}_aggregate.csv")), &report)?;
        print_summary(&stem, &report);
        reports.push((v.label.clone(), report));
    }
    let series: Vec<Series<'_>> = reports
        .iter()
        .map(|(label, report)| Series {
            label: label.clone(),
            report,
            methods: methods.clone(),
        })
        .collect();
    save_plot_data(&args.out.join(format!("{id}.csv")), &series)?;
    println!("results in {}", args.out.display());
    Ok(())
}

fn print_summary(stem: &str, report: &MonteCarloReport) {
    println!("{stem}");
    println!("  {:>5}  {:<14} {:>10} {:>10} {:>6} {:>6}", "sigma", "method", "eps_v", "eps_g", "iters", "failed");
    for a in &report.aggregates {
        println!(
            "  {:>5.2}  {:<14} {:>10.5} {:>10.4} {:>6} {:>6}",
            a.sigma,
            a.method.to_string(),
            a.mean_eps_v,
            a.mean_eps_g,
            a.median_iters,
            a.n_failed
        );
    }
}
