//! Experiment artifacts on disk.
//!
//! Layout under the output directory:
//!
//! ```text
//! summary.json
//! <filter>/rmse.csv
//! <filter>/run_<seed>.csv
//! <filter>/trace_<seed>.csv
//! ```

use std::fs;
use std::path::Path;

use pdafpf::metrics::{rmse_curve, RunRecord};

use crate::config::FilterKind;
use crate::error::Result;
use crate::experiment::ExperimentResult;

fn num(x: f64) -> String {
    // Display gives the shortest string that parses back to the same f64.
    format!("{x}")
}

/// Header of `run_<seed>.csv`.
pub fn run_header(record: &RunRecord) -> Vec<String> {
    let mut h = vec!["time".to_string()];
    for (t, path) in record.truth.iter().enumerate() {
        let dim = path[0].len();
        h.extend((0..dim).map(|i| format!("truth_{t}_{i}")));
        h.extend((0..dim).map(|i| format!("estimate_{t}_{i}")));
        h.push(format!("sq_error_{t}"));
    }
    h
}

/// Writes one run: truth, the estimate of the track matched to each target,
/// and the squared position error that enters the RMSE.
pub fn write_run_csv(path: &Path, record: &RunRecord) -> Result<()> {
    let assignment = record.assignment();
    let errors = record.squared_errors_with(&assignment);
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(run_header(record))?;
    for (k, &time) in record.times.iter().enumerate() {
        let mut row = vec![num(time)];
        for t in 0..record.truth.len() {
            row.extend(record.truth[t][k].iter().map(|&x| num(x)));
            row.extend(record.estimates[assignment[t]][k].iter().map(|&x| num(x)));
            row.push(num(errors[t][k]));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn trace_prefix(filter: FilterKind) -> &'static str {
    match filter {
        FilterKind::PdaFpf | FilterKind::KalmanPdaf => "beta",
        FilterKind::JpdaFpf => "pi",
        FilterKind::SirPf => "ess",
    }
}

/// Association trace: β for the PDA filters, π for JPDA, per-bank effective
/// sample size for the SIR filter.
pub fn write_trace_csv(path: &Path, filter: FilterKind, record: &RunRecord) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let width = record.beta_trace.first().map_or(0, Vec::len);
    let prefix = trace_prefix(filter);
    let mut header = vec!["time".to_string()];
    header.extend((0..width).map(|j| format!("{prefix}_{j}")));
    w.write_record(&header)?;
    for (time, values) in record.times.iter().zip(&record.beta_trace) {
        let mut row = vec![num(*time)];
        row.extend(values.iter().map(|&x| num(x)));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Pointwise RMSE over runs, overall and per target.
pub fn write_rmse_csv(path: &Path, records: &[RunRecord]) -> Result<()> {
    let overall = rmse_curve(records)?;
    let n_targets = records[0].truth.len();
    let per_target: Vec<Vec<f64>> = (0..n_targets)
        .map(|t| {
            let mut sum = vec![0.0; overall.len()];
            for r in records {
                for (s, e) in sum.iter_mut().zip(&r.squared_errors()[t]) {
                    *s += e;
                }
            }
            sum.into_iter().map(|s| (s / records.len() as f64).sqrt()).collect()
        })
        .collect();
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["time".to_string(), "rmse".to_string()];
    header.extend((0..n_targets).map(|t| format!("rmse_{t}")));
    w.write_record(&header)?;
    for (k, &time) in records[0].times.iter().enumerate() {
        let mut row = vec![num(time), num(overall[k])];
        row.extend(per_target.iter().map(|c| num(c[k])));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_outputs(dir: &Path, result: &ExperimentResult) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (setup, records) in result.setups.iter().zip(&result.records) {
        let sub = dir.join(setup.filter.label());
        fs::create_dir_all(&sub)?;
        for r in records {
            write_run_csv(&sub.join(format!("run_{}.csv", r.seed)), r)?;
            write_trace_csv(&sub.join(format!("trace_{}.csv", r.seed)), setup.filter, r)?;
        }
        write_rmse_csv(&sub.join("rmse.csv"), records)?;
    }
    let json = serde_json::to_string_pretty(&result.summary)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}
