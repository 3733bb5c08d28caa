//! On-disk run artifacts: trajectory and diagnostics CSVs, the run manifest,
//! and reading a trajectory back for checks.

use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spsgf_core::dynamics::NetworkState;
use spsgf_core::integrate::{Record, StepDiagnostics, Termination, Trajectory};
use spsgf_core::problem::SeparableProblem;

use crate::config::SimConfig;
use crate::error::{CliError, Result};

pub const TRAJECTORY_CSV: &str = "trajectory.csv";
pub const DIAGNOSTICS_CSV: &str = "diagnostics.csv";
pub const MANIFEST_JSON: &str = "manifest.json";
pub const REPORT_JSON: &str = "report.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Block {
    X,
    V,
    Y,
    Z,
    Lambda,
    Mu,
}

#[derive(Debug, Clone)]
struct Column {
    block: Block,
    index: usize,
    name: String,
}

fn block_mut(s: &mut NetworkState, b: Block) -> &mut Vec<f64> {
    match b {
        Block::X => &mut s.x,
        Block::V => &mut s.v,
        Block::Y => &mut s.y,
        Block::Z => &mut s.z,
        Block::Lambda => &mut s.lambda,
        Block::Mu => &mut s.mu,
    }
}

fn block(s: &NetworkState, b: Block) -> &[f64] {
    match b {
        Block::X => &s.x,
        Block::V => &s.v,
        Block::Y => &s.y,
        Block::Z => &s.z,
        Block::Lambda => &s.lambda,
        Block::Mu => &s.mu,
    }
}

/// State columns in file order. Blocks sized per agent are interleaved agent
/// by agent; blocks that are not (aggregate multipliers) follow.
fn state_columns(template: &NetworkState, problem: &SeparableProblem) -> Vec<Column> {
    let d = problem.dims();
    let widths = [
        (Block::X, "x", d.agent_dim),
        (Block::V, "v", d.agent_dim),
        (Block::Y, "y", d.num_ineq),
        (Block::Z, "z", d.num_eq),
        (Block::Lambda, "lambda", d.num_ineq),
        (Block::Mu, "mu", d.num_eq),
    ];
    let per_agent = |b: Block, w: usize| {
        let len = block(template, b).len();
        len > 0 && len == d.num_agents * w
    };
    let mut cols = Vec::new();
    for i in 0..d.num_agents {
        for &(b, name, w) in &widths {
            if per_agent(b, w) {
                cols.extend((0..w).map(|k| Column {
                    block: b,
                    index: i * w + k,
                    name: format!("{name}[{i}][{k}]"),
                }));
            }
        }
    }
    for &(b, name, w) in &widths {
        if !per_agent(b, w) {
            cols.extend((0..block(template, b).len()).map(|k| Column {
                block: b,
                index: k,
                name: format!("{name}[{k}]"),
            }));
        }
    }
    cols
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> CliError + '_ {
    move |source| CliError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn create(path: &Path) -> Result<csv::Writer<File>> {
    csv::Writer::from_path(path).map_err(csv_err(path))
}

/// Streams records into `trajectory.csv` and `diagnostics.csv`.
pub struct CsvSink {
    trajectory: csv::Writer<File>,
    diagnostics: csv::Writer<File>,
    columns: Vec<Column>,
    agent_dim: usize,
    decision_in_x: bool,
    dir: PathBuf,
    rows: usize,
}

impl CsvSink {
    pub fn create(dir: &Path, template: &NetworkState, problem: &SeparableProblem) -> Result<Self> {
        let columns = state_columns(template, problem);
        let d = problem.dims();
        let mut trajectory = create(&dir.join(TRAJECTORY_CSV))?;
        let mut diagnostics = create(&dir.join(DIAGNOSTICS_CSV))?;
        let tail = || {
            (0..d.num_ineq)
                .map(|k| format!("g[{k}]"))
                .chain((0..d.num_eq).map(|l| format!("h[{l}]")))
                .chain(["snorm".into(), "obj".into()])
        };
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain(columns.iter().map(|c| c.name.clone()))
            .chain(tail())
            .collect();
        trajectory
            .write_record(&header)
            .map_err(csv_err(&dir.join(TRAJECTORY_CSV)))?;
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..d.agent_dim).map(|k| format!("sumsq[{k}]")))
            .chain(tail())
            .chain(["descent_lhs".into(), "descent_bound".into()])
            .collect();
        diagnostics
            .write_record(&header)
            .map_err(csv_err(&dir.join(DIAGNOSTICS_CSV)))?;
        Ok(CsvSink {
            trajectory,
            diagnostics,
            columns,
            agent_dim: d.agent_dim,
            decision_in_x: !template.x.is_empty(),
            dir: dir.to_path_buf(),
            rows: 0,
        })
    }

    pub fn write(&mut self, r: &Record) -> Result<()> {
        let diag = &r.diagnostics;
        let tail = diag
            .g
            .iter()
            .chain(&diag.h)
            .chain([&diag.snorm, &diag.objective])
            .map(|v| num(*v));
        let row: Vec<String> = std::iter::once(num(r.time))
            .chain(
                self.columns
                    .iter()
                    .map(|c| num(block(&r.state, c.block)[c.index])),
            )
            .chain(tail.clone())
            .collect();
        self.trajectory
            .write_record(&row)
            .map_err(csv_err(&self.dir.join(TRAJECTORY_CSV)))?;

        let decision = if self.decision_in_x {
            &r.state.x
        } else {
            &r.state.v
        };
        let mut sumsq = vec![0.0; self.agent_dim];
        for (j, v) in decision.iter().enumerate() {
            sumsq[j % self.agent_dim] += v * v;
        }
        let row: Vec<String> = std::iter::once(num(r.time))
            .chain(sumsq.into_iter().map(num))
            .chain(tail)
            .chain([
                num(diag.descent_lhs),
                diag.descent_bound.map(num).unwrap_or_default(),
            ])
            .collect();
        self.diagnostics
            .write_record(&row)
            .map_err(csv_err(&self.dir.join(DIAGNOSTICS_CSV)))?;
        self.rows += 1;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn finish(mut self) -> Result<()> {
        for (w, name) in [
            (&mut self.trajectory, TRAJECTORY_CSV),
            (&mut self.diagnostics, DIAGNOSTICS_CSV),
        ] {
            w.flush().map_err(|source| CliError::Io {
                path: self.dir.join(name),
                source,
            })?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: String,
    pub config: SimConfig,
    pub termination: Termination,
    pub truncated: bool,
    pub steps_taken: usize,
    pub rows: usize,
    pub wall_time_seconds: f64,
    pub files: Vec<String>,
}

impl Manifest {
    pub fn write(&self, dir: &Path) -> Result<()> {
        let path = dir.join(MANIFEST_JSON);
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(&path, text + "\n").map_err(|source| CliError::Io { path, source })
    }

    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_JSON);
        if !path.is_file() {
            return Err(CliError::MissingArtifact(path));
        }
        let text = std::fs::read_to_string(&path).map_err(|source| CliError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Rebuilds the recorded trajectory from `trajectory.csv`. Only the
/// diagnostics stored in that file (g, h, snorm, obj) are restored.
pub fn read_trajectory(
    dir: &Path,
    manifest: &Manifest,
    problem: &SeparableProblem,
) -> Result<Trajectory> {
    let path = dir.join(TRAJECTORY_CSV);
    if !path.is_file() {
        return Err(CliError::MissingArtifact(path));
    }
    let malformed = |message: String| CliError::Malformed {
        path: path.clone(),
        message,
    };
    let cfg = &manifest.config;
    let template = cfg.initial_state(problem)?;
    let columns = state_columns(&template, problem);
    let d = problem.dims();
    let width = 1 + columns.len() + d.num_ineq + d.num_eq + 2;

    let mut reader = csv::Reader::from_path(&path).map_err(csv_err(&path))?;
    let header = reader.headers().map_err(csv_err(&path))?;
    let names_match = header.len() == width
        && columns
            .iter()
            .zip(header.iter().skip(1))
            .all(|(c, h)| c.name == h);
    if !names_match {
        return Err(malformed("header does not match the manifest".into()));
    }

    let mut records = Vec::new();
    for (step, row) in reader.records().enumerate() {
        let row = row.map_err(csv_err(&path))?;
        let vals = row
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(format!("row {}: {e}", step + 1)))?;
        if vals.len() != width {
            return Err(malformed(format!(
                "row {} has {} fields",
                step + 1,
                vals.len()
            )));
        }
        let mut state = template.clone();
        for (c, v) in columns.iter().zip(&vals[1..]) {
            block_mut(&mut state, c.block)[c.index] = *v;
        }
        let rest = &vals[1 + columns.len()..];
        let (g, rest) = rest.split_at(d.num_ineq);
        let (h, rest) = rest.split_at(d.num_eq);
        records.push(Record {
            step: (vals[0] / cfg.integrator.dt).round() as usize,
            time: vals[0],
            state,
            diagnostics: StepDiagnostics {
                g: g.to_vec(),
                h: h.to_vec(),
                snorm: rest[0],
                objective: rest[1],
                descent_lhs: f64::NAN,
                descent_bound: None,
                active_sets: Vec::new(),
            },
        });
    }
    let last_valid = records
        .last()
        .map(|r| r.state.clone())
        .ok_or_else(|| malformed("no data rows".into()))?;
    Ok(Trajectory {
        algorithm: cfg.algorithm,
        dt: cfg.integrator.dt,
        records,
        termination: manifest.termination.clone(),
        last_valid,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use spsgf_core::dynamics::Algorithm;
    use spsgf_core::problem::{build_resource_allocation, resource_initial_x};

    fn names(alg: Algorithm) -> Vec<String> {
        let prob = build_resource_allocation();
        let s = NetworkState::initial(alg, &prob, &resource_initial_x()).unwrap();
        state_columns(&s, &prob)
            .into_iter()
            .map(|c| c.name)
            .collect()
    }

    #[test]
    fn spsgf_columns_are_per_agent_blocks() {
        let n = names(Algorithm::SpSgf);
        // 2n + 2p + 2q with n = 2, p = q = 1
        assert_eq!(n.len(), 13 * 8);
        assert_eq!(
            &n[..8],
            [
                "x[0][0]",
                "x[0][1]",
                "v[0][0]",
                "v[0][1]",
                "y[0][0]",
                "z[0][0]",
                "lambda[0][0]",
                "mu[0][0]"
            ]
        );
        assert_eq!(n[8], "x[1][0]");
    }

    #[test]
    fn sp_multipliers_are_aggregate() {
        let n = names(Algorithm::Sp);
        assert_eq!(n.len(), 26 + 2);
        assert_eq!(&n[26..], ["lambda[0]", "mu[0]"]);
        assert_eq!(names(Algorithm::SpCm)[..2], ["v[0][0]", "v[0][1]"]);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, -2.343_209_060_576_605, 1e-300, 5.0 / 44.25, 0.0] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
    }
}
