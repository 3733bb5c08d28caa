//! Post-run checks on stored artifacts.

use std::path::Path;

use spsgf_core::verify::{
    certify_anytime, check_equilibrium, check_licq, convergence_report, sensitivity_sweep,
    solve_centralized, CheckRecord, OracleSolution, ACTIVE_TOL, DEFAULT_SETTLE_DELTA,
};

use crate::artifacts::{read_trajectory, Manifest, REPORT_JSON};
use crate::config::CheckKind;
use crate::error::{CliError, Result};

/// Constraint tolerance for the anytime check.
pub const ANYTIME_TOL: f64 = 1e-4;
/// Thresholds for the equilibrium check.
pub const EQUILIBRIUM_AT_OPTIMUM: f64 = 1e-6;
pub const EQUILIBRIUM_AWAY: f64 = 1e-4;
pub const EQUILIBRIUM_RADIUS: f64 = 0.1;
pub const EQUILIBRIUM_SAMPLES: usize = 20;
pub const SENSITIVITY_GRID: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// Runs `checks` against the artifacts in `dir`, writes `report.json` there
/// and returns the records. An empty `checks` falls back to the checks listed
/// in the run's configuration, and then to anytime + convergence.
pub fn report(dir: &Path, checks: &[CheckKind], seed: Option<u64>) -> Result<Vec<CheckRecord>> {
    let manifest = Manifest::read(dir)?;
    let cfg = &manifest.config;
    let problem = cfg.build_problem()?;
    let traj = read_trajectory(dir, &manifest, &problem)?;
    let seed = seed.unwrap_or(cfg.seed);

    let mut checks = if !checks.is_empty() {
        checks.to_vec()
    } else if !cfg.checks.is_empty() {
        cfg.checks.clone()
    } else {
        vec![CheckKind::Anytime, CheckKind::Convergence]
    };
    checks.sort();
    checks.dedup();

    let mut oracle: Option<OracleSolution> = None;
    let mut oracle = || -> Result<OracleSolution> {
        if oracle.is_none() {
            oracle = Some(solve_centralized(&problem, cfg.params.epsilon, true)?);
        }
        Ok(oracle.clone().expect("just set"))
    };

    let mut out = Vec::new();
    for check in checks {
        let rec = match check {
            CheckKind::Anytime => {
                let r = certify_anytime(&traj, &problem, ANYTIME_TOL)?;
                let detail = match r.first_violation_time {
                    Some(t) => format!("first violation above {ANYTIME_TOL:e} at t = {t}"),
                    None => format!("all recorded states within {ANYTIME_TOL:e}"),
                };
                let mut rec = CheckRecord::new(check.name(), r.passed, detail)
                    .metric("max_ineq_violation", r.max_ineq_violation)
                    .metric("max_eq_violation", r.max_eq_violation);
                if let Some(t) = r.first_violation_time {
                    rec = rec.metric("first_violation_time", t);
                }
                rec
            }
            CheckKind::Convergence => {
                let target = oracle()?
                    .regularized
                    .expect("requested reformulation")
                    .x_star_eps;
                let r = convergence_report(&traj, &target, DEFAULT_SETTLE_DELTA);
                let passed = r.final_distance < r.delta;
                let detail = match r.settle_time {
                    Some(t) => format!(
                        "within {:e} of the regularized optimizer from t = {t}",
                        r.delta
                    ),
                    None => format!("not within {:e} of the regularized optimizer", r.delta),
                };
                let mut rec = CheckRecord::new(check.name(), passed, detail)
                    .metric("final_distance", r.final_distance);
                if let Some(t) = r.settle_time {
                    rec = rec.metric("settle_time", t);
                }
                rec
            }
            CheckKind::Equilibrium => {
                let r = check_equilibrium(
                    &problem,
                    &cfg.params,
                    &oracle()?,
                    EQUILIBRIUM_SAMPLES,
                    EQUILIBRIUM_RADIUS,
                    seed,
                )?;
                let passed =
                    r.at_optimum < EQUILIBRIUM_AT_OPTIMUM && r.min_perturbed() > EQUILIBRIUM_AWAY;
                CheckRecord::new(
                    check.name(),
                    passed,
                    format!(
                        "|S| at the optimizer and minimum over {} feasible points at radius {}",
                        r.perturbed.len(),
                        r.perturbation_radius
                    ),
                )
                .metric("at_optimum", r.at_optimum)
                .metric("min_perturbed", r.min_perturbed())
            }
            CheckKind::Sensitivity => {
                let pts = sensitivity_sweep(&problem, &SENSITIVITY_GRID)?;
                let decreasing = pts.windows(2).all(|w| w[1].distance < w[0].distance);
                let mut rec = CheckRecord::new(
                    check.name(),
                    decreasing,
                    "distance between regularized and original optimizers, strictly decreasing in epsilon",
                );
                for p in pts {
                    rec = rec.metric(&format!("distance_eps_{:e}", p.epsilon), p.distance);
                }
                rec
            }
            CheckKind::Licq => {
                let x = traj.algorithm.decision(&traj.last_valid);
                let ok = check_licq(&problem, x, ACTIVE_TOL)?;
                CheckRecord::new(
                    check.name(),
                    ok,
                    "active constraint gradients at the final recorded point",
                )
            }
        };
        out.push(rec);
    }

    let path = dir.join(REPORT_JSON);
    std::fs::write(&path, serde_json::to_string_pretty(&out)? + "\n")
        .map_err(|source| CliError::Io { path, source })?;
    Ok(out)
}

/// One line per check: name, PASS/FAIL, metrics.
pub fn format_table(records: &[CheckRecord]) -> String {
    let width = records.iter().map(|r| r.check.len()).max().unwrap_or(0);
    records
        .iter()
        .map(|r| {
            let metrics: Vec<String> = r
                .metrics
                .iter()
                .map(|(k, v)| format!("{k}={v:.3e}"))
                .collect();
            format!(
                "{:width$}  {}  {}  ({})",
                r.check,
                if r.passed { "PASS" } else { "FAIL" },
                metrics.join(" "),
                r.detail
            )
        })
        .collect::<Vec<_>>()
        .join("\n")
}
