//! Ensemble execution and file output.
//!
//! A run resolves the initial state (ground-state search or snapshot),
//! dispatches the configured number of trajectories (concurrently when a
//! thread pool is available; results are folded in trajectory order so
//! output bytes never depend on scheduling), writes one time-series CSV per
//! trajectory plus an ensemble summary, and records a manifest sufficient to
//! replay any single trajectory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use stochmps_core::dmrg::{dmrg, DmrgOptions};
use stochmps_core::mpo::{
    apply_mpo, heisenberg_mpo, heisenberg_terms, measurement_mpo, MeasurementSpec, NnCoupling,
};
use stochmps_core::mps::MatrixProductState;
use stochmps_core::rng::RngStream;
use stochmps_core::snapshot;
use stochmps_core::stoch::{
    evaluate_observables, sse_trajectory, weak_trajectory, Observable, OutcomeEvent,
    TrajectoryOptions, TrajectoryRecord,
};

use crate::config::{RunMode, ScenarioConfig};
use crate::summary::{summarize, write_summary_csv, EnsembleSummary};
use crate::CliError;

#[derive(Debug, Clone, Serialize)]
pub struct TrajectoryManifest {
    /// Stream id: combined with the base seed this replays the trajectory.
    pub stream: u64,
    pub file: String,
    pub total_discarded: f64,
    pub budget_exceeded: bool,
    pub outcomes: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_state_file: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub code_version: String,
    /// SHA-256 of the resolved configuration text.
    pub config_sha256: String,
    /// The full configuration this run executed (overrides applied).
    pub resolved_config: String,
    pub base_seed: u64,
    pub observables: Vec<String>,
    pub time_points: usize,
    pub trajectories: Vec<TrajectoryManifest>,
    pub summary_file: String,
    /// Wall-clock duration; informational only, excluded from replay
    /// guarantees.
    pub wall_seconds: f64,
}

/// Resolve the initial state: an explicit snapshot wins, otherwise the
/// ground state of the exchange chain is computed.
pub fn prepare_initial_state(config: &ScenarioConfig) -> Result<MatrixProductState, CliError> {
    let l = config.lattice.sites;
    if let Some(path) = &config.ground_state.initial_state {
        let psi = snapshot::load_from_path(path)?;
        if psi.len() != l {
            return Err(CliError::config(
                "ground_state.initial_state",
                format!("snapshot has {} sites, config says {l}", psi.len()),
            ));
        }
        if psi.phys_dim() != 2 {
            return Err(CliError::config(
                "ground_state.initial_state",
                format!("snapshot has physical dimension {}, expected 2", psi.phys_dim()),
            ));
        }
        let mut psi = psi;
        psi.normalize()?;
        psi.set_log_norm_offset(0.0);
        return Ok(psi);
    }
    let h = heisenberg_mpo(l, config.lattice.coupling)?;
    let gs = dmrg(
        &h,
        &DmrgOptions {
            max_bond: config.ground_state.max_bond,
            sweeps: config.ground_state.sweeps,
            tol: config.ground_state.tol,
            ..Default::default()
        },
    )?;
    Ok(gs.state)
}

fn one_trajectory(
    config: &ScenarioConfig,
    psi0: &MatrixProductState,
    h_terms: &[NnCoupling],
    specs: &[MeasurementSpec],
    observables: &[Observable],
    stream: u64,
) -> Result<TrajectoryRecord, CliError> {
    let run = &config.run;
    let opts = TrajectoryOptions {
        duration: run.duration,
        max_bond: run.max_bond,
        svd_tol: run.svd_tol,
        truncation_budget: run.truncation_budget,
        dt_override: run.step,
        record_every: run.record_every,
        record_final_state: run.write_final_state,
    };
    let mut rng = RngStream::new(run.base_seed, stream);
    let rec = match run.mode {
        RunMode::Discrete => {
            weak_trajectory(psi0, h_terms, specs, observables, &opts, &mut rng)?
        }
        RunMode::Continuous => {
            let gamma = run.gamma.expect("validated");
            let dt = run.dt.expect("validated");
            sse_trajectory(psi0, h_terms, &specs[0], gamma, dt, observables, &opts, &mut rng)?
        }
        RunMode::Posterior => {
            posterior_trajectory(psi0, specs, observables, run.postselect, &opts)?
        }
    };
    Ok(rec)
}

/// Apply each readout once with a forced outcome; rows are indexed by event
/// count (1, 2, ...) rather than physical time.
fn posterior_trajectory(
    psi0: &MatrixProductState,
    specs: &[MeasurementSpec],
    observables: &[Observable],
    postselect: i8,
    opts: &TrajectoryOptions,
) -> Result<TrajectoryRecord, CliError> {
    let l = psi0.len();
    let mut state = psi0.clone();
    let names: Vec<String> = observables.iter().map(|o| o.name()).collect();
    let mut rec = TrajectoryRecord {
        times: Vec::new(),
        observable_names: names,
        values: Vec::new(),
        outcomes: Vec::new(),
        truncation: Vec::new(),
        total_discarded: 0.0,
        budget_exceeded: false,
        final_state: None,
    };
    for (k, spec) in specs.iter().enumerate() {
        let kraus = measurement_mpo(l, spec, postselect)?;
        let (next, reports) = apply_mpo(&kraus, &state, opts.max_bond, opts.svd_tol)?;
        state = next;
        state.normalize()?;
        let discarded: f64 = reports.iter().map(|r| r.discarded_weight).sum();
        let t = (k + 1) as f64;
        rec.outcomes.push(OutcomeEvent::Readout { time: t, spec: k, mu: postselect });
        let vals = evaluate_observables(&mut state, observables)?;
        rec.times.push(t);
        rec.values.push(vals);
        rec.truncation.push(discarded);
        rec.total_discarded += discarded;
    }
    rec.budget_exceeded = rec.total_discarded > opts.truncation_budget;
    if opts.record_final_state {
        rec.final_state = Some(state);
    }
    Ok(rec)
}

fn write_trajectory_csv<W: Write>(mut w: W, rec: &TrajectoryRecord) -> Result<(), CliError> {
    let mut header = String::from("time");
    for name in &rec.observable_names {
        header.push(',');
        header.push_str(name);
    }
    writeln!(w, "{header}")?;
    for (t, vals) in rec.times.iter().zip(&rec.values) {
        let mut line = format!("{t}");
        for v in vals {
            line.push_str(&format!(",{v}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

/// Execute a validated scenario; returns the manifest after writing all
/// output files into the configured directory.
pub fn run(config: &ScenarioConfig) -> Result<RunManifest, CliError> {
    config.validate()?;
    let started = Instant::now();

    let resolved = config.to_toml()?;
    let config_sha256 = {
        let mut h = Sha256::new();
        h.update(resolved.as_bytes());
        let digest = h.finalize();
        digest.iter().map(|b| format!("{b:02x}")).collect::<String>()
    };

    let psi0 = prepare_initial_state(config)?;
    let h_terms = heisenberg_terms(config.lattice.sites, config.lattice.coupling);
    let specs = config.build_specs()?;
    let observables = config.build_observables()?;

    let out_dir: &Path = &config.output.directory;
    fs::create_dir_all(out_dir)?;

    // shared initial row so every series starts at t = 0
    let initial_values = {
        let mut work = psi0.clone();
        evaluate_observables(&mut work, &observables).map_err(CliError::from)?
    };

    let n = config.run.trajectories;
    let results: Vec<Result<TrajectoryRecord, CliError>> = (0..n as u64)
        .into_par_iter()
        .map(|stream| one_trajectory(config, &psi0, &h_terms, &specs, &observables, stream))
        .collect();

    let mut records = Vec::with_capacity(n);
    for (stream, res) in results.into_iter().enumerate() {
        let mut rec = res?;
        rec.times.insert(0, 0.0);
        rec.values.insert(0, initial_values.clone());
        rec.truncation.insert(0, 0.0);
        records.push((stream as u64, rec));
    }

    let mut traj_manifests = Vec::with_capacity(n);
    for (stream, rec) in &records {
        let file = format!("traj_{stream:04}.csv");
        let f = fs::File::create(out_dir.join(&file))?;
        write_trajectory_csv(std::io::BufWriter::new(f), rec)?;
        let final_state_file = if let Some(state) = &rec.final_state {
            let sf = format!("final_{stream:04}.mps");
            snapshot::save_to_path(out_dir.join(&sf), state)?;
            Some(sf)
        } else {
            None
        };
        traj_manifests.push(TrajectoryManifest {
            stream: *stream,
            file,
            total_discarded: rec.total_discarded,
            budget_exceeded: rec.budget_exceeded,
            outcomes: rec.outcomes.len(),
            final_state_file,
        });
    }

    let plain: Vec<TrajectoryRecord> = records.iter().map(|(_, r)| r.clone()).collect();
    let summary = summarize(&plain)?;
    let summary_file = "summary.csv".to_string();
    {
        let f = fs::File::create(out_dir.join(&summary_file))?;
        write_summary_csv(std::io::BufWriter::new(f), &summary)?;
    }

    let manifest = RunManifest {
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        config_sha256,
        resolved_config: resolved,
        base_seed: config.run.base_seed,
        observables: summary.observable_names.clone(),
        time_points: summary.times.len(),
        trajectories: traj_manifests,
        summary_file,
        wall_seconds: started.elapsed().as_secs_f64(),
    };
    let manifest_json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| CliError::internal(e.to_string()))?;
    fs::write(out_dir.join("manifest.json"), manifest_json)?;
    Ok(manifest)
}

/// Convenience wrapper: run and also return the in-memory summary.
pub fn run_with_summary(
    config: &ScenarioConfig,
) -> Result<(RunManifest, EnsembleSummary), CliError> {
    let manifest = run(config)?;
    let dir: &PathBuf = &config.output.directory;
    // reload to keep the pair consistent with what was written
    let mut records = Vec::new();
    for tm in &manifest.trajectories {
        let text = fs::read_to_string(dir.join(&tm.file))?;
        records.push(parse_trajectory_csv(&text)?);
    }
    let summary = summarize(&records)?;
    Ok((manifest, summary))
}

/// Parse a trajectory CSV written by this runner (used for re-summarizing
/// and by tests).
pub fn parse_trajectory_csv(text: &str) -> Result<TrajectoryRecord, CliError> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Io("empty trajectory file".into()))?;
    let names: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    let mut times = Vec::new();
    let mut values = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split(',');
        let t: f64 = parts
            .next()
            .unwrap()
            .parse()
            .map_err(|e| CliError::Io(format!("line {}: {e}", lineno + 2)))?;
        let row: Vec<f64> = parts
            .map(|p| p.parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|e| CliError::Io(format!("line {}: {e}", lineno + 2)))?;
        if row.len() != names.len() {
            return Err(CliError::Io(format!(
                "line {}: expected {} columns, got {}",
                lineno + 2,
                names.len() + 1,
                row.len() + 1
            )));
        }
        times.push(t);
        values.push(row);
    }
    Ok(TrajectoryRecord {
        times,
        observable_names: names,
        values,
        outcomes: vec![],
        truncation: vec![],
        total_discarded: 0.0,
        budget_exceeded: false,
        final_state: None,
    })
}
