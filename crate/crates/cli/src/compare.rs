use std::fs::File;
use std::io::BufReader;
use std::path::Path;

use anyhow::{Context, Result};
use rsvio_core::io::{read_json, EstimateJson};
use rsvio_synth::error_metrics;
use serde::Deserialize;

use crate::args::CompareArgs;
use crate::dataset::GroundTruth;

#[derive(Deserialize)]
#[serde(untagged)]
enum EstimateFile {
    One(EstimateJson),
    Many(Vec<EstimateJson>),
}

fn load<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_json(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn run(args: &CompareArgs) -> Result<()> {
    let gt: GroundTruth = load(&args.gt)?;
    let (v_gt, g_gt) = (gt.v0.into(), gt.g0.into());
    let mut rows = Vec::new();
    for path in &args.estimate {
        let estimates = match load::<EstimateFile>(path)? {
            EstimateFile::One(e) => vec![e],
            EstimateFile::Many(v) => v,
        };
        for e in estimates {
            let (ev, eg) = error_metrics(&e.v0(), &e.g0(), &v_gt, &g_gt)?;
            rows.push((path.display().to_string(), e.method, ev, eg, e.converged));
        }
    }

    println!("{:<14} {:>12} {:>12} {:>10}", "method", "eps_v [m/s]", "eps_g [deg]", "converged");
    for (_, m, ev, eg, c) in &rows {
        println!("{:<14} {:>12.3e} {:>12.3e} {:>10}", m.to_string(), ev, eg, c);
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
        w.write_record(["file", "method", "eps_v", "eps_g", "converged"])?;
        for (file, m, ev, eg, c) in &rows {
            w.write_record([file.clone(), m.to_string(), format!("{ev:e}"), format!("{eg:e}"), c.to_string()])?;
        }
        w.flush()?;
    }
    Ok(())
}
