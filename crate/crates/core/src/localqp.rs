//! Per-agent safe-gradient-flow subproblem:
//!
//! ```text
//! minimize    1/2 |xi + grad|^2
//! subject to  A xi <= b      (linearized inequalities)
//!             E xi  = c      (linearized equalities)
//! ```
//!
//! The Hessian is the identity, so a dual active-set method started from the
//! unconstrained minimizer `-grad` needs no phase-one and ends with exact
//! multipliers for the final working set.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use thiserror::Error;

use crate::problem::SeparableProblem;

/// Feasibility / complementarity tolerance of returned solutions.
pub const KKT_TOL: f64 = 1e-8;
/// Relative singular-value cutoff for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Largest number of inequality rows accepted (desk-scale subproblems).
pub const MAX_INEQ: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct LocalQp {
    pub gradient: DVector<f64>,
    /// `p x n`
    pub ineq_normals: DMatrix<f64>,
    pub ineq_bounds: DVector<f64>,
    /// `q x n`
    pub eq_normals: DMatrix<f64>,
    pub eq_bounds: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QpSolution {
    pub direction: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
    /// Inequality rows in the final working set, ascending.
    pub active_set: Vec<usize>,
    /// Tight constraint normals are linearly dependent: multipliers are not unique.
    pub degenerate: bool,
}

/// A constraint row, named by kind and index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Row {
    Ineq(usize),
    Eq(usize),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QpError {
    #[error("local QP infeasible: rows {subsystem:?} cannot hold simultaneously (residual {residual:e})")]
    Infeasible { subsystem: Vec<Row>, residual: f64 },
    #[error(
        "tight constraint normals {tight:?} are linearly dependent; multipliers are not unique"
    )]
    Degenerate { tight: Vec<Row> },
    #[error("constraint normal is zero")]
    ZeroNormal,
    #[error("malformed QP: {0}")]
    Malformed(String),
    #[error("active-set iteration did not terminate after {0} steps")]
    IterationLimit(usize),
}

/// KKT residual components of a candidate solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktResidual {
    pub stationarity: f64,
    pub primal: f64,
    pub dual: f64,
    pub complementarity: f64,
}

impl KktResidual {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal)
            .max(self.dual)
            .max(self.complementarity)
    }
}

impl LocalQp {
    pub fn new(
        gradient: DVector<f64>,
        ineq_normals: DMatrix<f64>,
        ineq_bounds: DVector<f64>,
        eq_normals: DMatrix<f64>,
        eq_bounds: DVector<f64>,
    ) -> Result<Self, QpError> {
        let qp = LocalQp {
            gradient,
            ineq_normals,
            ineq_bounds,
            eq_normals,
            eq_bounds,
        };
        qp.check_shape()?;
        Ok(qp)
    }

    /// A QP with inequality rows only.
    pub fn with_inequalities(gradient: &[f64], normals: &[&[f64]], bounds: &[f64]) -> Self {
        let n = gradient.len();
        LocalQp {
            gradient: DVector::from_column_slice(gradient),
            ineq_normals: DMatrix::from_fn(normals.len(), n, |r, c| normals[r][c]),
            ineq_bounds: DVector::from_column_slice(bounds),
            eq_normals: DMatrix::zeros(0, n),
            eq_bounds: DVector::zeros(0),
        }
    }

    pub fn dim(&self) -> usize {
        self.gradient.len()
    }

    pub fn num_ineq(&self) -> usize {
        self.ineq_normals.nrows()
    }

    pub fn num_eq(&self) -> usize {
        self.eq_normals.nrows()
    }

    fn check_shape(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.ineq_normals.ncols() != n || self.eq_normals.ncols() != n {
            return Err(QpError::Malformed(format!("normals must have {n} columns")));
        }
        if self.ineq_bounds.len() != self.num_ineq() || self.eq_bounds.len() != self.num_eq() {
            return Err(QpError::Malformed(
                "bound count differs from row count".into(),
            ));
        }
        if self.num_ineq() > MAX_INEQ {
            return Err(QpError::Malformed(format!(
                "{} inequality rows exceed the supported {MAX_INEQ}",
                self.num_ineq()
            )));
        }
        Ok(())
    }

    fn normal(&self, row: Row) -> DVector<f64> {
        match row {
            Row::Ineq(k) => self.ineq_normals.row(k).transpose(),
            Row::Eq(l) => self.eq_normals.row(l).transpose(),
        }
    }

    fn bound(&self, row: Row) -> f64 {
        match row {
            Row::Ineq(k) => self.ineq_bounds[k],
            Row::Eq(l) => self.eq_bounds[l],
        }
    }

    /// Stationarity, feasibility, sign and complementarity residuals of `sol`.
    pub fn kkt_residual(&self, sol: &QpSolution) -> KktResidual {
        let stat = &sol.direction
            + &self.gradient
            + self.ineq_normals.transpose() * &sol.ineq_multipliers
            + self.eq_normals.transpose() * &sol.eq_multipliers;
        let slack = &self.ineq_bounds - &self.ineq_normals * &sol.direction;
        let eq_res = &self.eq_normals * &sol.direction - &self.eq_bounds;
        let primal = slack
            .iter()
            .map(|s| (-s).max(0.0))
            .chain(eq_res.iter().map(|r| r.abs()))
            .fold(0.0, f64::max);
        let dual = sol
            .ineq_multipliers
            .iter()
            .map(|m| (-m).max(0.0))
            .fold(0.0, f64::max);
        let comp = sol
            .ineq_multipliers
            .iter()
            .zip(slack.iter())
            .map(|(m, s)| (m * s).abs())
            .fold(0.0, f64::max);
        KktResidual {
            stationarity: stat.amax(),
            primal,
            dual,
            complementarity: comp,
        }
    }
}

impl QpSolution {
    /// Fails when the multipliers are not unique.
    pub fn require_unique(self) -> Result<Self, QpError> {
        if self.degenerate {
            let tight = self.active_set.iter().map(|&k| Row::Ineq(k)).collect();
            return Err(QpError::Degenerate { tight });
        }
        Ok(self)
    }
}

/// Working set: stacked normals, their rows and multipliers.
struct WorkingSet {
    rows: Vec<Row>,
    mult: Vec<f64>,
}

impl WorkingSet {
    fn normals(&self, qp: &LocalQp) -> DMatrix<f64> {
        let n = qp.dim();
        DMatrix::from_fn(self.rows.len(), n, |r, c| match self.rows[r] {
            Row::Ineq(k) => qp.ineq_normals[(k, c)],
            Row::Eq(l) => qp.eq_normals[(l, c)],
        })
    }
}

/// `(N N')^{-1} N a`, the coefficients of `a` on the working normals.
fn project_coeffs(normals: &DMatrix<f64>, a: &DVector<f64>) -> Option<DVector<f64>> {
    if normals.nrows() == 0 {
        return Some(DVector::zeros(0));
    }
    let gram = normals * normals.transpose();
    let rhs = normals * a;
    gram.cholesky().map(|c| c.solve(&rhs))
}

/// Solves the equality-constrained subproblem on `rows` from scratch.
fn solve_on_rows(qp: &LocalQp, rows: &[Row]) -> Option<(DVector<f64>, DVector<f64>)> {
    let ws = WorkingSet {
        rows: rows.to_vec(),
        mult: Vec::new(),
    };
    let normals = ws.normals(qp);
    if normals.nrows() == 0 {
        return Some((-&qp.gradient, DVector::zeros(0)));
    }
    // xi = -g - N' nu,  N xi = b  =>  (N N') nu = -(b + N g)
    let bounds = DVector::from_iterator(rows.len(), rows.iter().map(|&r| qp.bound(r)));
    let gram = &normals * normals.transpose();
    let rhs = -(bounds + &normals * &qp.gradient);
    let nu = gram.cholesky()?.solve(&rhs);
    let xi = -&qp.gradient - normals.transpose() * &nu;
    Some((xi, nu))
}

fn rank(m: &DMatrix<f64>) -> usize {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.max();
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|s| **s > RANK_TOL * smax).count()
}

/// Solves the local subproblem with a dual active-set method.
///
/// Returns the unique minimizer and its multipliers. Linearly dependent
/// equality rows that are consistent are tolerated (the solution is flagged
/// `degenerate`); inconsistent rows produce [`QpError::Infeasible`] naming the
/// conflicting subsystem.
pub fn solve_local_qp(qp: &LocalQp) -> Result<QpSolution, QpError> {
    qp.check_shape()?;
    let (p, q) = (qp.num_ineq(), qp.num_eq());
    let mut degenerate = false;

    // Equalities first: keep a maximal independent subset, verify the rest afterwards.
    let mut ws = WorkingSet {
        rows: Vec::new(),
        mult: Vec::new(),
    };
    let mut redundant = Vec::new();
    for l in 0..q {
        let a = qp.normal(Row::Eq(l));
        if a.norm() == 0.0 {
            if qp.eq_bounds[l].abs() > KKT_TOL {
                return Err(QpError::Infeasible {
                    subsystem: vec![Row::Eq(l)],
                    residual: qp.eq_bounds[l].abs(),
                });
            }
            redundant.push(l);
            continue;
        }
        let mut trial = ws.rows.clone();
        trial.push(Row::Eq(l));
        let stacked = WorkingSet {
            rows: trial.clone(),
            mult: Vec::new(),
        }
        .normals(qp);
        if rank(&stacked) == trial.len() {
            ws.rows = trial;
        } else {
            redundant.push(l);
        }
    }
    let (mut xi, nu) = solve_on_rows(qp, &ws.rows)
        .ok_or_else(|| QpError::Malformed("equality normals became singular".into()))?;
    ws.mult = nu.iter().copied().collect();
    for &l in &redundant {
        let res = (qp.eq_normals.row(l) * &xi)[0] - qp.eq_bounds[l];
        if res.abs() > KKT_TOL * (1.0 + qp.eq_bounds[l].abs()) {
            let mut subsystem = ws.rows.clone();
            subsystem.push(Row::Eq(l));
            return Err(QpError::Infeasible {
                subsystem,
                residual: res.abs(),
            });
        }
        degenerate = true;
    }

    let max_iter = 50 * (p + q + 1);
    let mut iterations = 0;
    loop {
        // Most violated inequality outside the working set, scaled by its normal.
        let mut worst: Option<(usize, f64)> = None;
        for k in 0..p {
            if ws.rows.contains(&Row::Ineq(k)) {
                continue;
            }
            let a = qp.ineq_normals.row(k);
            let norm = a.norm();
            let viol = (a * &xi)[0] - qp.ineq_bounds[k];
            let scale = norm.max(f64::MIN_POSITIVE);
            let tol = 1e-13 * (1.0 + qp.ineq_bounds[k].abs() + norm * xi.norm());
            if viol > tol && worst.is_none_or(|(_, v)| viol / scale > v) {
                worst = Some((k, viol / scale));
            }
        }
        let Some((k_add, _)) = worst else { break };
        let a_add = qp.normal(Row::Ineq(k_add));
        let mut t_add = 0.0;

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit(max_iter));
            }
            let normals = ws.normals(qp);
            let r = project_coeffs(&normals, &a_add)
                .ok_or_else(|| QpError::Malformed("working normals became singular".into()))?;
            let z = &a_add - normals.transpose() * &r;
            let viol = a_add.dot(&xi) - qp.ineq_bounds[k_add];

            // Largest dual step keeping working inequality multipliers >= 0.
            let mut t_dual = f64::INFINITY;
            let mut drop_at = None;
            for (idx, row) in ws.rows.iter().enumerate() {
                if let Row::Ineq(_) = row {
                    if r[idx] > 1e-14 {
                        let t = ws.mult[idx] / r[idx];
                        if t < t_dual {
                            t_dual = t;
                            drop_at = Some(idx);
                        }
                    }
                }
            }
            let zz = z.norm_squared();
            // Relative test: a tiny normal is still independent if its own direction survives.
            let t_primal = if zz > 1e-20 * a_add.norm_squared() {
                viol.max(0.0) / zz
            } else {
                f64::INFINITY
            };
            if t_dual.is_infinite() && t_primal.is_infinite() {
                let mut subsystem = ws.rows.clone();
                subsystem.push(Row::Ineq(k_add));
                return Err(QpError::Infeasible {
                    subsystem,
                    residual: viol,
                });
            }
            let t = t_dual.min(t_primal);
            for (m, ri) in ws.mult.iter_mut().zip(r.iter()) {
                *m -= t * ri;
            }
            t_add += t;
            if t_primal.is_finite() {
                xi -= t * &z;
            }
            if t_primal <= t_dual {
                ws.rows.push(Row::Ineq(k_add));
                ws.mult.push(t_add);
                break;
            }
            let idx = drop_at.expect("finite dual step has a blocking row");
            ws.rows.remove(idx);
            ws.mult.remove(idx);
        }
    }

    // Re-solve on the final working set to shed accumulated round-off.
    if let Some((xi_clean, nu_clean)) = solve_on_rows(qp, &ws.rows) {
        xi = xi_clean;
        ws.mult = nu_clean.iter().copied().collect();
    }

    let mut ineq_multipliers = DVector::zeros(p);
    let mut eq_multipliers = DVector::zeros(q);
    let mut active_set = Vec::new();
    for (row, m) in ws.rows.iter().zip(&ws.mult) {
        match *row {
            Row::Ineq(k) => {
                ineq_multipliers[k] = *m;
                active_set.push(k);
            }
            Row::Eq(l) => eq_multipliers[l] = *m,
        }
    }
    active_set.sort_unstable();

    // Tight rows beyond the working set may make the multipliers non-unique.
    let tight: Vec<Row> = (0..q)
        .map(Row::Eq)
        .chain((0..p).filter_map(|k| {
            let slack = qp.ineq_bounds[k] - (qp.ineq_normals.row(k) * &xi)[0];
            let scale = 1.0 + qp.ineq_bounds[k].abs();
            (slack.abs() <= 1e-9 * scale).then_some(Row::Ineq(k))
        }))
        .collect();
    if !tight.is_empty() {
        let stacked = WorkingSet {
            rows: tight.clone(),
            mult: Vec::new(),
        }
        .normals(qp);
        if rank(&stacked) < tight.len() {
            degenerate = true;
        }
    }
    Ok(QpSolution {
        direction: xi,
        ineq_multipliers,
        eq_multipliers,
        active_set,
        degenerate,
    })
}

/// Closed-form solution with a single inequality row `normal . xi <= bound`.
pub fn solve_single_inequality(
    gradient: &[f64],
    normal: &[f64],
    bound: f64,
) -> Result<QpSolution, QpError> {
    let nn: f64 = normal.iter().map(|a| a * a).sum();
    if nn == 0.0 {
        return Err(QpError::ZeroNormal);
    }
    if gradient.len() != normal.len() {
        return Err(QpError::Malformed(
            "gradient and normal lengths differ".into(),
        ));
    }
    let descent = DVector::from_iterator(gradient.len(), gradient.iter().map(|g| -g));
    let a = DVector::from_column_slice(normal);
    let excess = a.dot(&descent) - bound;
    if excess <= 0.0 {
        return Ok(QpSolution {
            direction: descent,
            ineq_multipliers: DVector::zeros(1),
            eq_multipliers: DVector::zeros(0),
            active_set: Vec::new(),
            degenerate: false,
        });
    }
    let phi = excess / nn;
    Ok(QpSolution {
        direction: descent - phi * a,
        ineq_multipliers: DVector::from_element(1, phi),
        eq_multipliers: DVector::zeros(0),
        active_set: vec![0],
        degenerate: false,
    })
}

/// Whether `{grad g_i^k(x_i)} U {grad h_i^l(x_i)}` are linearly independent.
pub fn check_local_li(problem: &SeparableProblem, agent: usize, xi: &[f64]) -> bool {
    let (n, p, q) = (problem.agent_dim(), problem.num_ineq(), problem.num_eq());
    if p + q == 0 {
        return true;
    }
    if p + q > n {
        return false;
    }
    let mut stacked = DMatrix::zeros(p + q, n);
    for k in 0..p {
        let g = problem.ineq(agent, k).gradient(xi);
        stacked.row_mut(k).copy_from_slice(&g);
    }
    for l in 0..q {
        let g = problem.eq(agent, l).gradient(xi);
        stacked.row_mut(p + l).copy_from_slice(&g);
    }
    rank(&stacked) == p + q
}
