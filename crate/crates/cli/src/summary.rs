//! Ensemble reduction: per-time mean, variance and standard error.

use std::io::Write;

use stochmps_core::stoch::TrajectoryRecord;

use crate::CliError;

#[derive(Debug, Clone)]
pub struct EnsembleSummary {
    pub times: Vec<f64>,
    pub observable_names: Vec<String>,
    /// Indexed `[time][observable]`.
    pub mean: Vec<Vec<f64>>,
    /// Population variance (zero for a single trajectory).
    pub variance: Vec<Vec<f64>>,
    /// Standard error of the mean, `sqrt(variance / n)`.
    pub sem: Vec<Vec<f64>>,
    pub trajectories: usize,
}

/// Reduce an ensemble sharing one time grid. The reduction is a sequential
/// fold in record order, so identical inputs give bit-identical output.
pub fn summarize(records: &[TrajectoryRecord]) -> Result<EnsembleSummary, CliError> {
    let first = records
        .first()
        .ok_or_else(|| CliError::internal("cannot summarize an empty ensemble"))?;
    for (i, r) in records.iter().enumerate() {
        if r.times != first.times {
            return Err(CliError::config(
                "records",
                format!("trajectory {i} has a different time grid"),
            ));
        }
        if r.observable_names != first.observable_names {
            return Err(CliError::config(
                "records",
                format!("trajectory {i} has different observables"),
            ));
        }
    }

    let nt = first.times.len();
    let no = first.observable_names.len();
    let n = records.len() as f64;
    let mut mean = vec![vec![0.0; no]; nt];
    let mut m2 = vec![vec![0.0; no]; nt];
    for r in records {
        for (k, vals) in r.values.iter().enumerate() {
            for (j, v) in vals.iter().enumerate() {
                mean[k][j] += v;
                m2[k][j] += v * v;
            }
        }
    }
    let mut variance = vec![vec![0.0; no]; nt];
    let mut sem = vec![vec![0.0; no]; nt];
    for k in 0..nt {
        for j in 0..no {
            mean[k][j] /= n;
            variance[k][j] = (m2[k][j] / n - mean[k][j] * mean[k][j]).max(0.0);
            sem[k][j] = (variance[k][j] / n).sqrt();
        }
    }
    Ok(EnsembleSummary {
        times: first.times.clone(),
        observable_names: first.observable_names.clone(),
        mean,
        variance,
        sem,
        trajectories: records.len(),
    })
}

/// CSV layout: `time` then `<name>_mean,<name>_var,<name>_sem` per observable.
pub fn write_summary_csv<W: Write>(mut w: W, s: &EnsembleSummary) -> Result<(), CliError> {
    let mut header = String::from("time");
    for name in &s.observable_names {
        header.push_str(&format!(",{name}_mean,{name}_var,{name}_sem"));
    }
    writeln!(w, "{header}")?;
    for (k, t) in s.times.iter().enumerate() {
        let mut line = format!("{t}");
        for j in 0..s.observable_names.len() {
            line.push_str(&format!(",{},{},{}", s.mean[k][j], s.variance[k][j], s.sem[k][j]));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}
