mod args;
mod benchmark;
mod compare;
mod dataset;
mod scenario;
mod simulate;
mod solve;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RSVIO_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    let result = match &cli.command {
        Command::Simulate(a) => simulate::run(a).map(|()| ExitCode::SUCCESS),
        Command::Solve(a) => solve::run(a).map(|o| match o {
            solve::Outcome::Converged => ExitCode::SUCCESS,
            solve::Outcome::Diverged => {
                eprintln!("warning: at least one estimator did not converge");
                ExitCode::from(2)
            }
        }),
        Command::Benchmark(a) => benchmark::run(a).map(|()| ExitCode::SUCCESS),
        Command::Compare(a) => compare::run(a).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(1)
    })
}
