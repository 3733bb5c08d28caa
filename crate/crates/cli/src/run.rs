//! Executing single runs and sweeps.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use spsgf_core::dynamics::{make_field, Algorithm};
use spsgf_core::integrate::{integrate_with, Termination};

use crate::artifacts::{CsvSink, Manifest, DIAGNOSTICS_CSV, TRAJECTORY_CSV};
use crate::config::SimConfig;
use crate::error::{CliError, Result};

/// Runs `cfg` and writes its artifacts into `cfg.output`. A run that stops
/// early still writes everything it recorded and returns the manifest with
/// `truncated` set.
pub fn run(cfg: &SimConfig) -> Result<Manifest> {
    let errors = cfg.errors();
    if !errors.is_empty() {
        return Err(CliError::Invalid(errors));
    }
    let problem = cfg.build_problem()?;
    let initial = cfg.initial_state(&problem)?;
    let dir = &cfg.output;
    std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
        path: dir.clone(),
        source,
    })?;

    let start = Instant::now();
    let field = make_field(cfg.algorithm, &problem, cfg.params, false);
    let mut sink = CsvSink::create(dir, &initial, &problem)?;
    let mut write_error = None;
    let summary = integrate_with(field.as_ref(), &initial, &cfg.integrator, |r| {
        if write_error.is_none() {
            write_error = sink.write(&r).err();
        }
    })?;
    if let Some(e) = write_error {
        return Err(e);
    }
    let rows = sink.rows();
    sink.finish()?;

    let manifest = Manifest {
        version: env!("CARGO_PKG_VERSION").to_string(),
        config: cfg.clone(),
        truncated: !summary.termination.is_completed(),
        termination: summary.termination,
        steps_taken: summary.steps_taken,
        rows,
        wall_time_seconds: start.elapsed().as_secs_f64(),
        files: vec![TRAJECTORY_CSV.into(), DIAGNOSTICS_CSV.into()],
    };
    manifest.write(dir)?;
    Ok(manifest)
}

/// Describes why a manifest is truncated, if it is.
pub fn truncation(manifest: &Manifest) -> Option<String> {
    match &manifest.termination {
        Termination::Completed => None,
        Termination::FieldError { time, error, .. } => Some(format!("t = {time}: {error}")),
        Termination::NonFinite { time, .. } => Some(format!("non-finite state at t = {time}")),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub algorithm: Algorithm,
    pub tau: f64,
    pub dir: PathBuf,
    /// `completed`, `truncated` or an error message.
    pub status: String,
}

pub fn sweep_dir(root: &Path, algorithm: Algorithm, tau: f64) -> PathBuf {
    root.join(format!("{algorithm}-tau{tau}"))
}

/// Runs every (algorithm, tau) pair of the sweep grid concurrently, each into
/// its own directory under `cfg.output`, and writes `sweep.json` there.
pub fn sweep(cfg: &SimConfig) -> Result<Vec<SweepEntry>> {
    let spec = cfg.sweep.clone().unwrap_or_default();
    let algorithms = if spec.algorithms.is_empty() {
        vec![cfg.algorithm]
    } else {
        spec.algorithms.clone()
    };
    let jobs: Vec<SimConfig> = algorithms
        .iter()
        .flat_map(|&algorithm| {
            spec.tau.iter().map(move |&tau| {
                let mut c = cfg.clone();
                c.algorithm = algorithm;
                c.params.tau = tau;
                c.output = sweep_dir(&cfg.output, algorithm, tau);
                c.sweep = None;
                c
            })
        })
        .collect();
    for job in &jobs {
        let errors = job.errors();
        if !errors.is_empty() {
            return Err(CliError::Invalid(errors));
        }
    }

    std::fs::create_dir_all(&cfg.output).map_err(|source| CliError::Io {
        path: cfg.output.clone(),
        source,
    })?;
    let entries: Vec<SweepEntry> = jobs
        .par_iter()
        .map(|job| {
            let status = match run(job) {
                Ok(m) if m.truncated => "truncated".to_string(),
                Ok(_) => "completed".to_string(),
                Err(e) => e.to_string(),
            };
            SweepEntry {
                algorithm: job.algorithm,
                tau: job.params.tau,
                dir: job.output.clone(),
                status,
            }
        })
        .collect();
    let path = cfg.output.join("sweep.json");
    std::fs::write(&path, serde_json::to_string_pretty(&entries)? + "\n")
        .map_err(|source| CliError::Io { path, source })?;
    Ok(entries)
}
