//! Dense centralized optimizer used as an independent reference.
//!
//! A primal-dual interior-point method (Mehrotra predictor-corrector on a
//! slack formulation) brings the iterate close to the optimum; a Newton solve
//! on the identified active set then polishes it to rounding level. Only
//! function values, exact derivatives and the Laplacian matrix are shared with
//! the rest of the crate.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::SeparableProblem;

/// Smooth convex program `min F(w) s.t. G(w) <= 0, E(w) = 0` with affine `E`.
pub trait Program {
    fn dim(&self) -> usize;
    fn num_ineq(&self) -> usize;
    fn num_eq(&self) -> usize;
    fn objective(&self, w: &DVector<f64>) -> f64;
    fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64>;
    /// `hess F(w) + sum_k lambda_k hess G_k(w)`
    fn lagrangian_hessian(&self, w: &DVector<f64>, lambda: &DVector<f64>) -> DMatrix<f64>;
    fn ineq(&self, w: &DVector<f64>) -> DVector<f64>;
    fn ineq_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64>;
    fn eq(&self, w: &DVector<f64>) -> DVector<f64>;
    fn eq_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64>;
}

/// The coupled problem over `x`, optionally with objective `1/2 |x - target|^2`.
pub struct OriginalProgram<'a> {
    pub problem: &'a SeparableProblem,
    pub target: Option<Vec<f64>>,
}

impl OriginalProgram<'_> {
    fn block<'w>(&self, w: &'w DVector<f64>, i: usize) -> &'w [f64] {
        let n = self.problem.agent_dim();
        &w.as_slice()[i * n..(i + 1) * n]
    }
}

impl Program for OriginalProgram<'_> {
    fn dim(&self) -> usize {
        self.problem.decision_len()
    }

    fn num_ineq(&self) -> usize {
        self.problem.num_ineq()
    }

    fn num_eq(&self) -> usize {
        self.problem.num_eq()
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        match &self.target {
            Some(t) => 0.5 * w.iter().zip(t).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(),
            None => (0..self.problem.num_agents())
                .map(|i| self.problem.objective(i).value(self.block(w, i)))
                .sum(),
        }
    }

    fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        match &self.target {
            Some(t) => DVector::from_iterator(w.len(), w.iter().zip(t).map(|(a, b)| a - b)),
            None => {
                let n = self.problem.agent_dim();
                let mut g = DVector::zeros(w.len());
                for i in 0..self.problem.num_agents() {
                    self.problem.objective(i).add_gradient(
                        self.block(w, i),
                        1.0,
                        &mut g.as_mut_slice()[i * n..(i + 1) * n],
                    );
                }
                g
            }
        }
    }

    fn lagrangian_hessian(&self, w: &DVector<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
        let n = self.problem.agent_dim();
        let mut h = DMatrix::zeros(w.len(), w.len());
        for i in 0..self.problem.num_agents() {
            let xi = self.block(w, i);
            match &self.target {
                Some(_) => {
                    for d in 0..n {
                        h[(i * n + d, i * n + d)] += 1.0;
                    }
                }
                None => self
                    .problem
                    .objective(i)
                    .add_hessian(xi, 1.0, &mut h, i * n),
            }
            for k in 0..self.problem.num_ineq() {
                self.problem
                    .ineq(i, k)
                    .add_hessian(xi, lambda[k], &mut h, i * n);
            }
        }
        h
    }

    fn ineq(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.num_ineq(), |k, _| {
            (0..self.problem.num_agents())
                .map(|i| self.problem.ineq(i, k).value(self.block(w, i)))
                .sum()
        })
    }

    fn ineq_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.problem.agent_dim();
        let mut jac = DMatrix::zeros(self.num_ineq(), w.len());
        for k in 0..self.num_ineq() {
            for i in 0..self.problem.num_agents() {
                let g = self.problem.ineq(i, k).gradient(self.block(w, i));
                for d in 0..n {
                    jac[(k, i * n + d)] = g[d];
                }
            }
        }
        jac
    }

    fn eq(&self, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.num_eq(), |l, _| {
            (0..self.problem.num_agents())
                .map(|i| self.problem.eq(i, l).value(self.block(w, i)))
                .sum()
        })
    }

    fn eq_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let n = self.problem.agent_dim();
        let mut jac = DMatrix::zeros(self.num_eq(), w.len());
        for l in 0..self.num_eq() {
            for i in 0..self.problem.num_agents() {
                let g = self.problem.eq(i, l).gradient(self.block(w, i));
                for d in 0..n {
                    jac[(l, i * n + d)] = g[d];
                }
            }
        }
        jac
    }
}

/// The regularized mismatch reformulation over `w = (x, y, z)`.
pub struct ReformulatedProgram<'a> {
    pub problem: &'a SeparableProblem,
    pub epsilon: f64,
    laplacian: DMatrix<f64>,
}

impl<'a> ReformulatedProgram<'a> {
    pub fn new(problem: &'a SeparableProblem, epsilon: f64) -> Self {
        ReformulatedProgram {
            problem,
            epsilon,
            laplacian: problem.graph().laplacian(),
        }
    }

    fn nx(&self) -> usize {
        self.problem.decision_len()
    }

    fn y_index(&self, i: usize, k: usize) -> usize {
        self.nx() + i * self.problem.num_ineq() + k
    }

    fn z_index(&self, i: usize, l: usize) -> usize {
        self.nx()
            + self.problem.num_agents() * self.problem.num_ineq()
            + i * self.problem.num_eq()
            + l
    }

    fn xblock<'w>(&self, w: &'w DVector<f64>, i: usize) -> &'w [f64] {
        let n = self.problem.agent_dim();
        &w.as_slice()[i * n..(i + 1) * n]
    }

    /// `(L u)_i` for the column `u_j = w[index(j)]`.
    fn lap_row(&self, w: &DVector<f64>, i: usize, index: impl Fn(usize) -> usize) -> f64 {
        (0..self.problem.num_agents())
            .map(|j| self.laplacian[(i, j)] * w[index(j)])
            .sum()
    }
}

impl Program for ReformulatedProgram<'_> {
    fn dim(&self) -> usize {
        let nag = self.problem.num_agents();
        self.nx() + nag * (self.problem.num_ineq() + self.problem.num_eq())
    }

    fn num_ineq(&self) -> usize {
        self.problem.num_agents() * self.problem.num_ineq()
    }

    fn num_eq(&self) -> usize {
        self.problem.num_agents() * self.problem.num_eq()
    }

    fn objective(&self, w: &DVector<f64>) -> f64 {
        let f: f64 = (0..self.problem.num_agents())
            .map(|i| self.problem.objective(i).value(self.xblock(w, i)))
            .sum();
        let reg: f64 = w.as_slice()[self.nx()..].iter().map(|v| v * v).sum();
        f + 0.5 * self.epsilon * reg
    }

    fn objective_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let n = self.problem.agent_dim();
        let mut g = DVector::zeros(w.len());
        for i in 0..self.problem.num_agents() {
            self.problem.objective(i).add_gradient(
                self.xblock(w, i),
                1.0,
                &mut g.as_mut_slice()[i * n..(i + 1) * n],
            );
        }
        for idx in self.nx()..w.len() {
            g[idx] = self.epsilon * w[idx];
        }
        g
    }

    fn lagrangian_hessian(&self, w: &DVector<f64>, lambda: &DVector<f64>) -> DMatrix<f64> {
        let n = self.problem.agent_dim();
        let p = self.problem.num_ineq();
        let mut h = DMatrix::zeros(w.len(), w.len());
        for i in 0..self.problem.num_agents() {
            let xi = self.xblock(w, i);
            self.problem
                .objective(i)
                .add_hessian(xi, 1.0, &mut h, i * n);
            for k in 0..p {
                self.problem
                    .ineq(i, k)
                    .add_hessian(xi, lambda[i * p + k], &mut h, i * n);
            }
        }
        for idx in self.nx()..w.len() {
            h[(idx, idx)] += self.epsilon;
        }
        h
    }

    fn ineq(&self, w: &DVector<f64>) -> DVector<f64> {
        let p = self.problem.num_ineq();
        DVector::from_fn(self.num_ineq(), |row, _| {
            let (i, k) = (row / p, row % p);
            self.problem.ineq(i, k).value(self.xblock(w, i))
                + self.lap_row(w, i, |j| self.y_index(j, k))
        })
    }

    fn ineq_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (n, p) = (self.problem.agent_dim(), self.problem.num_ineq());
        let mut jac = DMatrix::zeros(self.num_ineq(), w.len());
        for i in 0..self.problem.num_agents() {
            for k in 0..p {
                let row = i * p + k;
                let g = self.problem.ineq(i, k).gradient(self.xblock(w, i));
                for d in 0..n {
                    jac[(row, i * n + d)] = g[d];
                }
                for j in 0..self.problem.num_agents() {
                    jac[(row, self.y_index(j, k))] = self.laplacian[(i, j)];
                }
            }
        }
        jac
    }

    fn eq(&self, w: &DVector<f64>) -> DVector<f64> {
        let q = self.problem.num_eq();
        DVector::from_fn(self.num_eq(), |row, _| {
            let (i, l) = (row / q, row % q);
            self.problem.eq(i, l).value(self.xblock(w, i))
                + self.lap_row(w, i, |j| self.z_index(j, l))
        })
    }

    fn eq_jacobian(&self, w: &DVector<f64>) -> DMatrix<f64> {
        let (n, q) = (self.problem.agent_dim(), self.problem.num_eq());
        let mut jac = DMatrix::zeros(self.num_eq(), w.len());
        for i in 0..self.problem.num_agents() {
            for l in 0..q {
                let row = i * q + l;
                let g = self.problem.eq(i, l).gradient(self.xblock(w, i));
                for d in 0..n {
                    jac[(row, i * n + d)] = g[d];
                }
                for j in 0..self.problem.num_agents() {
                    jac[(row, self.z_index(j, l))] = self.laplacian[(i, j)];
                }
            }
        }
        jac
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleOptions {
    pub max_iterations: usize,
    /// Interior-point stopping tolerance on residuals and the duality measure.
    pub tolerance: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        OracleOptions {
            max_iterations: 200,
            tolerance: 1e-10,
        }
    }
}

/// Primal-dual optimum of a [`Program`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProgramSolution {
    pub w: DVector<f64>,
    pub lambda: DVector<f64>,
    pub nu: DVector<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
    pub polished: bool,
}

/// Max-norm KKT residual: stationarity, primal feasibility, dual sign, complementarity.
pub fn kkt_residual<P: Program + ?Sized>(
    prog: &P,
    w: &DVector<f64>,
    lambda: &DVector<f64>,
    nu: &DVector<f64>,
) -> f64 {
    let g = prog.ineq(w);
    let stat = prog.objective_gradient(w)
        + prog.ineq_jacobian(w).transpose() * lambda
        + prog.eq_jacobian(w).transpose() * nu;
    let mut r = stat.amax();
    r = r.max(prog.eq(w).amax());
    for k in 0..g.len() {
        r = r.max(g[k].max(0.0));
        r = r.max((-lambda[k]).max(0.0));
        r = r.max((lambda[k] * g[k]).abs());
    }
    r
}

const DUAL_REG: f64 = 1e-11;

const STALL_LEVEL: f64 = 1e-6;

/// Largest KKT residual accepted for a returned solution.
pub const CERTIFY_TOL: f64 = 1e-8;

/// Solves the saddle system `[[M, A'], [A, -delta I]] [dw; dnu] = [r1; r2]`.
fn solve_saddle(
    m: &DMatrix<f64>,
    a: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let (n, r) = (m.nrows(), a.nrows());
    let mut k = DMatrix::zeros(n + r, n + r);
    k.view_mut((0, 0), (n, n)).copy_from(m);
    k.view_mut((0, n), (n, r)).copy_from(&a.transpose());
    k.view_mut((n, 0), (r, n)).copy_from(a);
    for i in 0..r {
        k[(n + i, n + i)] = -DUAL_REG;
    }
    let mut rhs = DVector::zeros(n + r);
    rhs.rows_mut(0, n).copy_from(r1);
    rhs.rows_mut(n, r).copy_from(r2);
    let sol = k.full_piv_lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, r).into_owned()))
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(1.0, f64::min)
}

struct Residuals<'r> {
    r_d: &'r DVector<f64>,
    r_pi: &'r DVector<f64>,
    r_pe: &'r DVector<f64>,
    mu: f64,
}

/// Predictor-corrector direction `(dw, dnu, ds, dlambda)`.
/// Step in (w, s, lambda, nu).
type Direction = (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>);

fn mehrotra_direction<P: Program + ?Sized>(
    prog: &P,
    w: &DVector<f64>,
    s: &DVector<f64>,
    lambda: &DVector<f64>,
    jac: &DMatrix<f64>,
    a: &DMatrix<f64>,
    res: &Residuals<'_>,
) -> Option<Direction> {
    let m = s.len();
    let hess = prog.lagrangian_hessian(w, lambda);
    let mut jd = jac.clone();
    for k in 0..m {
        jd.row_mut(k).scale_mut(lambda[k] / s[k]);
    }
    let big_m = &hess + jac.transpose() * &jd;
    // Newton direction for the complementarity target `r_c`.
    let direction = |r_c: &DVector<f64>| {
        let corr = DVector::from_fn(m, |k, _| (r_c[k] - lambda[k] * res.r_pi[k]) / s[k]);
        let rhs1 = -res.r_d + jac.transpose() * corr;
        let (dw, dnu) = solve_saddle(&big_m, a, &rhs1, &(-res.r_pe))?;
        let ds = -res.r_pi - jac * &dw;
        let dl = DVector::from_fn(m, |k, _| (-r_c[k] - lambda[k] * ds[k]) / s[k]);
        let finite = dw
            .iter()
            .chain(ds.iter())
            .chain(dl.iter())
            .all(|v| v.is_finite());
        finite.then_some((dw, dnu, ds, dl))
    };
    let predictor = direction(&s.component_mul(lambda))?;
    if m == 0 {
        return Some(predictor);
    }
    let (_, _, ds, dl) = &predictor;
    let a_aff = max_step(s, ds).min(max_step(lambda, dl));
    let mu_aff = (s + a_aff * ds).dot(&(lambda + a_aff * dl)) / m as f64;
    let sigma = (mu_aff / res.mu).powi(3).min(1.0);
    let r_c = DVector::from_fn(m, |k, _| s[k] * lambda[k] + ds[k] * dl[k] - sigma * res.mu);
    direction(&r_c)
}

/// Minimizes `prog` starting from `w0`.
pub fn solve_program<P: Program + ?Sized>(
    prog: &P,
    w0: DVector<f64>,
    opts: &OracleOptions,
) -> Result<ProgramSolution> {
    let (m, r) = (prog.num_ineq(), prog.num_eq());
    let mut w = w0;
    let g0 = prog.ineq(&w);
    let mut s = DVector::from_fn(m, |k, _| (-g0[k]).max(1.0));
    let mut lambda = DVector::from_element(m, 1.0);
    let mut nu = DVector::zeros(r);
    let mut history = Vec::new();
    let mut iterations = 0;
    let mut best_res = f64::INFINITY;
    let mut best_iterate = (w.clone(), s.clone(), lambda.clone(), nu.clone());
    let mut since_best = 0;

    loop {
        let g = prog.ineq(&w);
        let jac = prog.ineq_jacobian(&w);
        let a = prog.eq_jacobian(&w);
        let r_d = prog.objective_gradient(&w) + jac.transpose() * &lambda + a.transpose() * &nu;
        let r_pi = &g + &s;
        let r_pe = prog.eq(&w);
        let mu = if m > 0 {
            s.dot(&lambda) / m as f64
        } else {
            0.0
        };
        let res = r_d.amax().max(r_pi.amax()).max(r_pe.amax()).max(mu);
        history.push(res);
        if res < best_res {
            best_res = res;
            best_iterate = (w.clone(), s.clone(), lambda.clone(), nu.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        // A plateau near the optimum is left to the active-set polish.
        if res <= opts.tolerance || (best_res < STALL_LEVEL && since_best >= 5) {
            break;
        }
        if iterations >= opts.max_iterations || !res.is_finite() {
            return Err(Error::OracleDiverged {
                iterations,
                residual: res,
                history,
            });
        }
        iterations += 1;

        let residuals = Residuals {
            r_d: &r_d,
            r_pi: &r_pi,
            r_pe: &r_pe,
            mu,
        };
        let stepped = mehrotra_direction(prog, &w, &s, &lambda, &jac, &a, &residuals).and_then(
            |(dw, dnu, ds, dl)| {
                let mut step = if m > 0 {
                    (0.99 * max_step(&s, &ds).min(max_step(&lambda, &dl))).min(1.0)
                } else {
                    1.0
                };
                // Back off from regions where the functions overflow.
                while !(prog.ineq(&(&w + step * &dw)).iter().all(|v| v.is_finite())
                    && prog.objective(&(&w + step * &dw)).is_finite())
                {
                    step *= 0.5;
                    if step < 1e-12 {
                        return None;
                    }
                }
                Some((
                    &w + step * dw,
                    &nu + step * dnu,
                    &s + step * ds,
                    &lambda + step * dl,
                ))
            },
        );
        match stepped {
            Some((w1, nu1, s1, l1)) => {
                w = w1;
                nu = nu1;
                s = s1;
                lambda = l1;
            }
            None if best_res < STALL_LEVEL => break,
            None => {
                return Err(Error::OracleDiverged {
                    iterations,
                    residual: res,
                    history,
                })
            }
        }
    }
    let (w, s, lambda, nu) = best_iterate;

    let ipm_residual = kkt_residual(prog, &w, &lambda, &nu);
    let mut best = ProgramSolution {
        w,
        lambda,
        nu,
        kkt_residual: ipm_residual,
        iterations,
        polished: false,
    };
    if let Some(p) = polish(prog, &best, &s) {
        if p.kkt_residual <= best.kkt_residual {
            best = p;
        }
    }
    if best.kkt_residual.is_nan() || best.kkt_residual > CERTIFY_TOL {
        history.push(best.kkt_residual);
        return Err(Error::OracleDiverged {
            iterations,
            residual: best.kkt_residual,
            history,
        });
    }
    Ok(best)
}

/// Newton on the active-set KKT equations, holding inactive multipliers at zero.
fn polish<P: Program + ?Sized>(
    prog: &P,
    start: &ProgramSolution,
    slack: &DVector<f64>,
) -> Option<ProgramSolution> {
    let m = prog.num_ineq();
    let active: Vec<usize> = (0..m).filter(|&k| start.lambda[k] > slack[k]).collect();
    let na = active.len();
    let mut w = start.w.clone();
    let mut lambda = DVector::zeros(m);
    for &k in &active {
        lambda[k] = start.lambda[k];
    }
    let mut nu = start.nu.clone();
    let n = w.len();
    let r = nu.len();
    for _ in 0..30 {
        let g = prog.ineq(&w);
        let jac = prog.ineq_jacobian(&w);
        let a = prog.eq_jacobian(&w);
        let ja = DMatrix::from_fn(na, n, |row, c| jac[(active[row], c)]);
        let stat = prog.objective_gradient(&w) + jac.transpose() * &lambda + a.transpose() * &nu;
        let ga = DVector::from_fn(na, |row, _| g[active[row]]);
        let h = prog.eq(&w);
        let res = stat.amax().max(ga.amax()).max(h.amax());
        if res <= 1e-15 {
            break;
        }
        let cons = {
            let mut c = DMatrix::zeros(na + r, n);
            c.view_mut((0, 0), (na, n)).copy_from(&ja);
            c.view_mut((na, 0), (r, n)).copy_from(&a);
            c
        };
        let mut rhs2 = DVector::zeros(na + r);
        rhs2.rows_mut(0, na).copy_from(&(-&ga));
        rhs2.rows_mut(na, r).copy_from(&(-&h));
        let hess = prog.lagrangian_hessian(&w, &lambda);
        let (dw, dmult) = solve_saddle(&hess, &cons, &(-&stat), &rhs2)?;
        w += &dw;
        for (row, &k) in active.iter().enumerate() {
            lambda[k] += dmult[row];
        }
        nu += dmult.rows(na, r);
        if w.iter().any(|v| !v.is_finite()) {
            return None;
        }
    }
    if active.iter().any(|&k| lambda[k] < 0.0) {
        return None;
    }
    Some(ProgramSolution {
        kkt_residual: kkt_residual(prog, &w, &lambda, &nu),
        w,
        lambda,
        nu,
        iterations: start.iterations,
        polished: true,
    })
}

/// Optimum of the regularized reformulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularizedOptimum {
    pub epsilon: f64,
    pub x_star_eps: Vec<f64>,
    pub y_star_eps: Vec<f64>,
    pub z_star_eps: Vec<f64>,
    /// Per-agent inequality multipliers (`N*p`).
    pub lambda: Vec<f64>,
    /// Per-agent equality multipliers (`N*q`).
    pub mu: Vec<f64>,
    pub kkt_residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    /// Aggregate inequality multipliers.
    pub lambda: Vec<f64>,
    /// Aggregate equality multipliers.
    pub mu: Vec<f64>,
    pub kkt_residual: f64,
    pub regularized: Option<RegularizedOptimum>,
}

/// Optimizer of the coupled problem.
pub fn solve_original(problem: &SeparableProblem) -> Result<ProgramSolution> {
    let prog = OriginalProgram {
        problem,
        target: None,
    };
    solve_program(&prog, DVector::zeros(prog.dim()), &OracleOptions::default())
}

/// Optimizer of the regularized reformulation.
pub fn solve_regularized(problem: &SeparableProblem, epsilon: f64) -> Result<RegularizedOptimum> {
    if epsilon.is_nan() || epsilon <= 0.0 {
        return Err(Error::Parameter(format!(
            "epsilon must be > 0, got {epsilon}"
        )));
    }
    let prog = ReformulatedProgram::new(problem, epsilon);
    let sol = solve_program(&prog, DVector::zeros(prog.dim()), &OracleOptions::default())?;
    let nx = problem.decision_len();
    let ny = problem.num_agents() * problem.num_ineq();
    let w = sol.w.as_slice();
    Ok(RegularizedOptimum {
        epsilon,
        x_star_eps: w[..nx].to_vec(),
        y_star_eps: w[nx..nx + ny].to_vec(),
        z_star_eps: w[nx + ny..].to_vec(),
        lambda: sol.lambda.as_slice().to_vec(),
        mu: sol.nu.as_slice().to_vec(),
        kkt_residual: sol.kkt_residual,
    })
}

/// `x*` and, when `on_reformulation`, `(x*eps, y*eps, z*eps)`.
pub fn solve_centralized(
    problem: &SeparableProblem,
    epsilon: f64,
    on_reformulation: bool,
) -> Result<OracleSolution> {
    let sol = solve_original(problem)?;
    let regularized = if on_reformulation {
        Some(solve_regularized(problem, epsilon)?)
    } else {
        None
    };
    Ok(OracleSolution {
        x_star: sol.w.as_slice().to_vec(),
        lambda: sol.lambda.as_slice().to_vec(),
        mu: sol.nu.as_slice().to_vec(),
        kkt_residual: sol.kkt_residual,
        regularized,
    })
}

/// Euclidean projection of `target` onto the feasible set.
pub fn project_onto_feasible(problem: &SeparableProblem, target: &[f64]) -> Result<Vec<f64>> {
    problem.check_decision(target)?;
    let prog = OriginalProgram {
        problem,
        target: Some(target.to_vec()),
    };
    let sol = solve_program(
        &prog,
        DVector::from_column_slice(target),
        &OracleOptions::default(),
    )?;
    Ok(sol.w.as_slice().to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::ScalarFunction;
    use crate::graph::Graph;
    use crate::problem::{build_resource_allocation, RESOURCE_WEIGHTS};
    use std::sync::Arc;

    #[test]
    fn resource_allocation_matches_analytic_optimum() {
        let prob = build_resource_allocation();
        let sol = solve_centralized(&prob, 1e-4, false).unwrap();
        let sum_sq: f64 = RESOURCE_WEIGHTS.iter().map(|p| p * p).sum();
        assert_eq!(sum_sq, 44.25);
        for (i, w) in RESOURCE_WEIGHTS.iter().enumerate() {
            assert!((sol.x_star[2 * i] - 5.0 * w / 44.25).abs() < 1e-8);
            assert!((sol.x_star[2 * i + 1] - (13.0f64 / 3.0).ln()).abs() < 1e-8);
        }
        assert!(sol.kkt_residual < 1e-8);
        // Analytic multipliers: mu = 5/44.25, lambda = 13/3 (from x_i2 = lambda e^{-x_i2}).
        assert!((sol.mu[0] - 5.0 / 44.25).abs() < 1e-8);
        assert!((sol.lambda[0] - 13.0 / 3.0 * (13.0f64 / 3.0).ln()).abs() < 1e-8);
    }

    #[test]
    fn unconstrained_minimizer_is_stationary() {
        let graph = Arc::new(Graph::cycle(4).unwrap());
        let objectives = (0..4)
            .map(|i| ScalarFunction::half_squared_distance(&[i as f64, -1.0]))
            .collect();
        let prob =
            SeparableProblem::new(graph, 2, objectives, vec![vec![]; 4], vec![vec![]; 4]).unwrap();
        let sol = solve_centralized(&prob, 1e-3, true).unwrap();
        let grad = prob.objective_gradient(&sol.x_star);
        assert!(grad.iter().all(|g| g.abs() < 1e-10));
        let reg = sol.regularized.unwrap();
        assert!(reg.y_star_eps.is_empty() && reg.z_star_eps.is_empty());
    }

    #[test]
    fn regularized_optimum_is_certified_and_close() {
        let prob = build_resource_allocation();
        let sol = solve_centralized(&prob, 1e-2, true).unwrap();
        let reg = sol.regularized.unwrap();
        assert!(reg.kkt_residual < 1e-8, "{}", reg.kkt_residual);
        // Feasible for the coupled problem.
        assert!(prob.is_feasible(&reg.x_star_eps, 1e-8).unwrap());
    }

    #[test]
    fn projection_of_feasible_point_is_identity() {
        let prob = build_resource_allocation();
        let x0 = crate::problem::resource_initial_x();
        let p = project_onto_feasible(&prob, &x0).unwrap();
        for (a, b) in p.iter().zip(&x0) {
            assert!((a - b).abs() < 1e-7);
        }
    }

    #[test]
    fn projection_lands_on_feasible_set() {
        let prob = build_resource_allocation();
        let target = vec![0.0; 26];
        let p = project_onto_feasible(&prob, &target).unwrap();
        assert!(prob.is_feasible(&p, 1e-9).unwrap());
    }
}
