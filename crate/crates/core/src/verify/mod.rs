//! Independent oracles and property checks.

mod oracle;

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{safe_gradient_directions, AlgorithmParams};
use crate::error::{Error, Result};
use crate::graph::{lift_feasible_point, LiftedPoint};
use crate::integrate::Trajectory;
use crate::problem::SeparableProblem;

pub use oracle::{
    kkt_residual, project_onto_feasible, solve_centralized, solve_original, solve_program,
    solve_regularized, OracleOptions, OracleSolution, OriginalProgram, Program, ProgramSolution,
    ReformulatedProgram, RegularizedOptimum, CERTIFY_TOL,
};

/// `|g^k(x)| <= ACTIVE_TOL` counts as active in [`check_licq`].
pub const ACTIVE_TOL: f64 = 1e-6;

/// Default settle band for [`convergence_report`].
pub const DEFAULT_SETTLE_DELTA: f64 = 1e-2;

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let top = sv.iter().cloned().fold(0.0, f64::max);
    sv.iter().filter(|s| **s > 1e-10 * top.max(1.0)).count()
}

/// Linear independence of the active aggregate inequality gradients and all
/// equality gradients at `x`.
pub fn check_licq(problem: &SeparableProblem, x: &[f64], tol: f64) -> Result<bool> {
    let agg = problem.eval_aggregate(x)?;
    let mut rows: Vec<Vec<f64>> = (0..problem.num_ineq())
        .filter(|&k| agg.g[k].abs() <= tol)
        .map(|k| problem.ineq_gradient(x, k))
        .collect();
    rows.extend((0..problem.num_eq()).map(|l| problem.eq_gradient(x, l)));
    if rows.is_empty() {
        return Ok(true);
    }
    let m = DMatrix::from_fn(rows.len(), x.len(), |r, c| rows[r][c]);
    Ok(numerical_rank(&m) == rows.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnytimeReport {
    /// `max_{t,k} g^k(x(t))^+`
    pub max_ineq_violation: f64,
    /// `max_{t,l} |h^l(x(t))|`
    pub max_eq_violation: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// First recorded time at which either violation exceeds the tolerance.
    pub first_violation_time: Option<f64>,
}

/// Scans every recorded decision variable for constraint violations.
pub fn certify_anytime(
    trajectory: &Trajectory,
    problem: &SeparableProblem,
    tol: f64,
) -> Result<AnytimeReport> {
    if trajectory.records.is_empty() {
        return Err(Error::Parameter("trajectory has no records".into()));
    }
    let mut report = AnytimeReport {
        max_ineq_violation: 0.0,
        max_eq_violation: 0.0,
        tolerance: tol,
        passed: true,
        first_violation_time: None,
    };
    for (rec, x) in trajectory.records.iter().zip(trajectory.decisions()) {
        let agg = problem.eval_aggregate(x)?;
        let gi = agg.g.iter().fold(0.0f64, |m, g| m.max(g.max(0.0)));
        let he = agg.h.iter().fold(0.0f64, |m, h| m.max(h.abs()));
        report.max_ineq_violation = report.max_ineq_violation.max(gi);
        report.max_eq_violation = report.max_eq_violation.max(he);
        if (gi > tol || he > tol || !gi.is_finite() || !he.is_finite())
            && report.first_violation_time.is_none()
        {
            report.first_violation_time = Some(rec.time);
            report.passed = false;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport {
    /// `|S_alpha(x*eps, y*eps, z*eps)|`
    pub at_optimum: f64,
    pub perturbation_radius: f64,
    /// `|S_alpha(x~, y*eps, z*eps)|` at each sampled feasible `x~`.
    pub perturbed: Vec<f64>,
}

impl EquilibriumReport {
    pub fn min_perturbed(&self) -> f64 {
        self.perturbed.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

fn safe_gradient_norm(
    problem: &SeparableProblem,
    alpha: f64,
    x: &[f64],
    opt: &RegularizedOptimum,
) -> Result<f64> {
    let sols =
        safe_gradient_directions(problem, alpha, x, &opt.y_star_eps, &opt.z_star_eps, false)?;
    Ok(sols
        .iter()
        .flat_map(|s| s.direction.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt())
}

/// Feasible points at exactly `radius` from `center`, along random directions
/// in the nullspace of the equality gradients that point into active inequalities.
pub fn sample_feasible_sphere(
    problem: &SeparableProblem,
    center: &[f64],
    radius: f64,
    count: usize,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let nn = center.len();
    let q = problem.num_eq();
    let eq_rows = DMatrix::from_fn(q, nn, |l, c| problem.eq_gradient(center, l)[c]);
    // Orthonormal basis of range(A') via SVD; projecting it out leaves the nullspace.
    let basis: Vec<DVector<f64>> = if q > 0 {
        let svd = eq_rows.transpose().svd(true, false);
        let u = svd.u.expect("requested U");
        let top = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        (0..svd.singular_values.len())
            .filter(|&j| svd.singular_values[j] > 1e-10 * top.max(1.0))
            .map(|j| u.column(j).into_owned())
            .collect()
    } else {
        Vec::new()
    };
    let ineq_grads: Vec<DVector<f64>> = (0..problem.num_ineq())
        .map(|k| DVector::from_vec(problem.ineq_gradient(center, k)))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 1000 * count.max(1) {
            return Err(Error::Infeasible(format!(
                "found only {} feasible points at radius {radius}",
                out.len()
            )));
        }
        let mut d = DVector::from_fn(nn, |_, _| rng.gen_range(-1.0..1.0));
        for b in &basis {
            let c = b.dot(&d);
            d -= c * b;
        }
        if ineq_grads.iter().map(|g| g.dot(&d)).sum::<f64>() > 0.0 {
            d = -d;
        }
        let norm = d.norm();
        if norm < 1e-12 {
            continue;
        }
        let cand: Vec<f64> = center
            .iter()
            .zip(d.iter())
            .map(|(c, di)| c + radius * di / norm)
            .collect();
        let agg = problem.eval_aggregate(&cand)?;
        if agg.g.iter().all(|g| *g <= 0.0) && agg.h.iter().all(|h| h.abs() <= 1e-12) {
            out.push(cand);
        }
    }
    Ok(out)
}

/// `|S_alpha|` at the regularized optimum and at sampled feasible points around it.
pub fn check_equilibrium(
    problem: &SeparableProblem,
    params: &AlgorithmParams,
    oracle: &OracleSolution,
    samples: usize,
    radius: f64,
    seed: u64,
) -> Result<EquilibriumReport> {
    let opt = oracle
        .regularized
        .as_ref()
        .ok_or_else(|| Error::Parameter("oracle was not solved on the reformulation".into()))?;
    let at_optimum = safe_gradient_norm(problem, params.alpha, &opt.x_star_eps, opt)?;
    let points = sample_feasible_sphere(problem, &opt.x_star_eps, radius, samples, seed)?;
    let perturbed = points
        .iter()
        .map(|x| safe_gradient_norm(problem, params.alpha, x, opt))
        .collect::<Result<Vec<_>>>()?;
    Ok(EquilibriumReport {
        at_optimum,
        perturbation_radius: radius,
        perturbed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensitivityPoint {
    pub epsilon: f64,
    /// `|x*eps - x*|`
    pub distance: f64,
}

/// `|x*eps - x*|` for each `epsilon` (positive, strictly decreasing).
pub fn sensitivity_sweep(
    problem: &SeparableProblem,
    eps_list: &[f64],
) -> Result<Vec<SensitivityPoint>> {
    if eps_list.iter().any(|e| e.is_nan() || *e <= 0.0) || eps_list.windows(2).any(|w| w[1] >= w[0])
    {
        return Err(Error::Parameter(
            "epsilon list must be positive and strictly decreasing".into(),
        ));
    }
    let x_star = solve_original(problem)?.w;
    eps_list
        .par_iter()
        .map(|&epsilon| {
            let reg = solve_regularized(problem, epsilon)?;
            Ok(SensitivityPoint {
                epsilon,
                distance: distance(&reg.x_star_eps, x_star.as_slice()),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub final_distance: f64,
    pub delta: f64,
    /// First recorded time after which the distance stays below `delta`.
    pub settle_time: Option<f64>,
}

/// Distance of the decision variable to `target` at the end of the run and the settle time.
pub fn convergence_report(
    trajectory: &Trajectory,
    target: &[f64],
    delta: f64,
) -> ConvergenceReport {
    let dists: Vec<(f64, f64)> = trajectory
        .records
        .iter()
        .zip(trajectory.decisions())
        .map(|(r, x)| (r.time, distance(x, target)))
        .collect();
    let final_distance = dists.last().map_or(f64::NAN, |d| d.1);
    let mut settle_time = None;
    for &(t, d) in dists.iter().rev() {
        if d < delta {
            settle_time = Some(t);
        } else {
            break;
        }
    }
    ConvergenceReport {
        final_distance,
        delta,
        settle_time,
    }
}

/// A feasible decision and its lift to the reformulation.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibleStart {
    pub x: Vec<f64>,
    pub lift: LiftedPoint,
}

/// Samples uniformly in `[-box_half_width, box_half_width]^{Nn}`, projects onto the
/// feasible set and lifts the result.
pub fn random_feasible_starts(
    problem: &SeparableProblem,
    count: usize,
    box_half_width: f64,
    seed: u64,
) -> Result<Vec<FeasibleStart>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let targets: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            (0..problem.decision_len())
                .map(|_| rng.gen_range(-box_half_width..box_half_width))
                .collect()
        })
        .collect();
    targets
        .par_iter()
        .map(|t| {
            let x = project_onto_feasible(problem, t)?;
            let lift = lift_feasible_point(problem, &x)?;
            Ok(FeasibleStart { x, lift })
        })
        .collect()
}

/// One machine-readable check outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub check: String,
    pub passed: bool,
    pub metrics: BTreeMap<String, f64>,
    pub detail: String,
}

impl CheckRecord {
    pub fn new(check: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        CheckRecord {
            check: check.into(),
            passed,
            metrics: BTreeMap::new(),
            detail: detail.into(),
        }
    }

    pub fn metric(mut self, name: &str, value: f64) -> Self {
        self.metrics.insert(name.to_string(), value);
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Algorithm, NetworkState};
    use crate::function::ScalarFunction;
    use crate::graph::Graph;
    use crate::integrate::{Record, StepDiagnostics, Termination};
    use crate::problem::build_resource_allocation;
    use std::sync::Arc;

    fn pinned(x: Vec<f64>, n: usize) -> Trajectory {
        let rec = |k: usize| Record {
            step: k,
            time: k as f64 * 0.1,
            state: NetworkState {
                x: x.clone(),
                ..Default::default()
            },
            diagnostics: StepDiagnostics {
                g: vec![],
                h: vec![],
                snorm: 0.0,
                objective: 0.0,
                descent_lhs: 0.0,
                descent_bound: None,
                active_sets: vec![],
            },
        };
        Trajectory {
            algorithm: Algorithm::CentralizedSgf,
            dt: 0.1,
            records: (0..n).map(rec).collect(),
            termination: Termination::Completed,
            last_valid: NetworkState::default(),
        }
    }

    #[test]
    fn licq_cases() {
        let prob = build_resource_allocation();
        let sol = solve_centralized(&prob, 1e-4, false).unwrap();
        assert!(check_licq(&prob, &sol.x_star, ACTIVE_TOL).unwrap());

        let graph = Arc::new(Graph::line(2).unwrap());
        let f = || ScalarFunction::half_squared_distance(&[0.0]);
        let e = || ScalarFunction::affine(vec![1.0], -0.5);
        let dup = SeparableProblem::new(
            graph.clone(),
            1,
            vec![f(), f()],
            vec![vec![], vec![]],
            vec![vec![e(), e()], vec![e(), e()]],
        )
        .unwrap();
        assert!(!check_licq(&dup, &[0.5, 0.5], ACTIVE_TOL).unwrap());

        let free =
            SeparableProblem::new(graph, 1, vec![f(), f()], vec![vec![]; 2], vec![vec![]; 2])
                .unwrap();
        assert!(check_licq(&free, &[1.0, 2.0], ACTIVE_TOL).unwrap());
    }

    #[test]
    fn constant_feasible_trajectory_certifies() {
        let prob = build_resource_allocation();
        let traj = pinned(crate::problem::resource_initial_x(), 5);
        let rep = certify_anytime(&traj, &prob, 1e-9).unwrap();
        assert!(rep.passed);
        assert_eq!(rep.max_ineq_violation, 0.0);
        assert!(rep.max_eq_violation < 1e-14);
        assert!(rep.first_violation_time.is_none());
    }

    #[test]
    fn pinned_trajectory_has_zero_distance() {
        let x = vec![1.0, 2.0];
        let rep = convergence_report(&pinned(x.clone(), 4), &x, DEFAULT_SETTLE_DELTA);
        assert_eq!(rep.final_distance, 0.0);
        assert_eq!(rep.settle_time, Some(0.0));
    }

    #[test]
    fn sweep_rejects_bad_lists() {
        let prob = build_resource_allocation();
        assert!(sensitivity_sweep(&prob, &[1e-3, 1e-2]).is_err());
        assert!(sensitivity_sweep(&prob, &[0.0]).is_err());
    }

    #[test]
    fn sphere_samples_are_feasible_at_radius() {
        let prob = build_resource_allocation();
        let sol = solve_centralized(&prob, 1e-4, false).unwrap();
        let pts = sample_feasible_sphere(&prob, &sol.x_star, 0.1, 20, 3).unwrap();
        for p in pts {
            assert!((distance(&p, &sol.x_star) - 0.1).abs() < 1e-12);
            assert!(prob.is_feasible(&p, 1e-12).unwrap());
        }
    }
}
