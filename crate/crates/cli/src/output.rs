//! Artifact emission: trajectory and deviation CSVs plus the JSON report.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::pipeline::PipelineRun;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

/// Writes the requested artifacts with deterministic names and contents.
///
/// `trajectory.csv` holds one row per stored sample: time, the six planar
/// leader positions, their rates, the six control inputs, the constraint
/// multiplier and the shared altitude. `deviations.csv` holds the per-agent
/// deviation series. `report.json` is the full run report.
pub fn emit(run: &PipelineRun, outdir: &Path, formats: &[Format]) -> std::io::Result<Vec<PathBuf>> {
    fs::create_dir_all(outdir)?;
    let mut written = Vec::new();

    if formats.contains(&Format::Csv) {
        let traj_path = outdir.join("trajectory.csv");
        let mut w = csv::Writer::from_path(&traj_path)?;
        let mut header = vec!["t".to_string()];
        for name in ["x", "y"] {
            for i in 1..=3 {
                header.push(format!("{name}{i}"));
            }
        }
        for name in ["vx", "vy"] {
            for i in 1..=3 {
                header.push(format!("{name}{i}"));
            }
        }
        for i in 1..=6 {
            header.push(format!("u{i}"));
        }
        header.push("gamma".to_string());
        header.push("z".to_string());
        w.write_record(&header)?;
        for (k, seg) in run.trajectory.segments.iter().enumerate() {
            for (i, t) in seg.times.iter().enumerate() {
                // Segment joints repeat the boundary state; keep one copy.
                if k > 0 && i == 0 {
                    continue;
                }
                let mut rec = vec![fmt(*t)];
                rec.extend(seg.states[i].iter().take(6).map(|v| fmt(*v)));
                rec.extend(seg.states[i].iter().skip(6).map(|v| fmt(*v)));
                rec.extend(seg.inputs[i].iter().map(|v| fmt(*v)));
                rec.push(fmt(seg.multiplier[i]));
                rec.push(fmt(run.trajectory.sample(*t).stack.0[6]));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        written.push(traj_path);

        let dev_path = outdir.join("deviations.csv");
        let mut w = csv::Writer::from_path(&dev_path)?;
        let n = run.deviations.per_agent.len();
        let mut header = vec!["t".to_string()];
        for i in 1..=n {
            header.push(format!("dev{i}"));
        }
        w.write_record(&header)?;
        for (ti, t) in run.deviations.times.iter().enumerate() {
            let mut rec = vec![fmt(*t)];
            for agent in &run.deviations.per_agent {
                rec.push(fmt(agent[ti]));
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        written.push(dev_path);
    }

    if formats.contains(&Format::Json) {
        let report_path = outdir.join("report.json");
        let mut f = fs::File::create(&report_path)?;
        serde_json::to_writer_pretty(&mut f, &run.report)?;
        f.write_all(b"\n")?;
        written.push(report_path);
    }

    Ok(written)
}

fn fmt(v: f64) -> String {
    // Shortest round-trip representation; stable across runs.
    format!("{v}")
}
