//! State-derivative maps for the four algorithms:
//!
//! * `sp-sgf`: projected saddle-point dynamics on the regularized mismatch
//!   reformulation (fast block `v, y, z, lambda, mu`, scaled by `1/tau`)
//!   cascaded into per-agent safe gradient flows on `x`.
//! * `sp`: projected saddle-point dynamics on the original coupled problem.
//! * `sp-cm`: the fast block of `sp-sgf` alone; `v` is the decision variable.
//! * `centralized-sgf`: the safe gradient flow of the coupled problem, solved
//!   as one QP over all agents.
//!
//! All maps are pure. Per-agent blocks only read the agent's own and its
//! neighbors' entries, so they can be evaluated in any order (or in parallel)
//! with bit-identical results.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::localqp::{solve_local_qp, solve_single_inequality, LocalQp, QpSolution};
use crate::problem::{reformulated_constraints, Dims, SeparableProblem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    SpSgf,
    Sp,
    SpCm,
    CentralizedSgf,
}

impl Algorithm {
    pub const ALL: [Algorithm; 4] = [
        Algorithm::SpSgf,
        Algorithm::Sp,
        Algorithm::SpCm,
        Algorithm::CentralizedSgf,
    ];

    /// The block reported as the decision variable (`v` for `sp-cm`, else `x`).
    pub fn decision(self, state: &NetworkState) -> &[f64] {
        if self == Algorithm::SpCm {
            &state.v
        } else {
            &state.x
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Algorithm::SpSgf => "sp-sgf",
            Algorithm::Sp => "sp",
            Algorithm::SpCm => "sp-cm",
            Algorithm::CentralizedSgf => "centralized-sgf",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Algorithm::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Parameter(format!("unknown algorithm `{s}`")))
    }
}

/// `tau` (timescale separation), `epsilon` (regularization), `alpha` (SGF gain).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmParams {
    pub tau: f64,
    pub epsilon: f64,
    pub alpha: f64,
}

impl Default for AlgorithmParams {
    fn default() -> Self {
        AlgorithmParams {
            tau: 1.0,
            epsilon: 1e-4,
            alpha: 1.0,
        }
    }
}

impl AlgorithmParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("tau", self.tau),
            ("epsilon", self.epsilon),
            ("alpha", self.alpha),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Parameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Stacked network state, agent-major within each block. Blocks an algorithm
/// does not use are empty; `sp` stores aggregate multipliers (`p`, `q` long).
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct NetworkState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub y: Vec<f64>,
    pub z: Vec<f64>,
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
}

impl NetworkState {
    /// A state with every block shaped like `self` and filled with zeros.
    pub fn zeros_like(&self) -> Self {
        NetworkState {
            x: vec![0.0; self.x.len()],
            v: vec![0.0; self.v.len()],
            y: vec![0.0; self.y.len()],
            z: vec![0.0; self.z.len()],
            lambda: vec![0.0; self.lambda.len()],
            mu: vec![0.0; self.mu.len()],
        }
    }

    fn blocks(&self) -> [&Vec<f64>; 6] {
        [&self.x, &self.v, &self.y, &self.z, &self.lambda, &self.mu]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<f64>; 6] {
        [
            &mut self.x,
            &mut self.v,
            &mut self.y,
            &mut self.z,
            &mut self.lambda,
            &mut self.mu,
        ]
    }

    /// `self + h * d`
    pub fn add_scaled(&self, h: f64, d: &NetworkState) -> NetworkState {
        let mut out = self.clone();
        for (o, b) in out.blocks_mut().into_iter().zip(d.blocks()) {
            for (oi, bi) in o.iter_mut().zip(b) {
                *oi += h * bi;
            }
        }
        out
    }

    /// Project multipliers of inequality constraints onto `[0, inf)`.
    pub fn clamp_multipliers(&mut self) {
        for l in &mut self.lambda {
            *l = l.max(0.0);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.blocks()
            .iter()
            .all(|b| b.iter().all(|v| v.is_finite()))
    }

    pub fn norm(&self) -> f64 {
        self.blocks()
            .iter()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// Number of scalar state variables.
    pub fn len(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Initial state for `algorithm` from decision `x0`: every other block zero,
    /// except `sp-cm` whose primal `v` is its decision variable and starts at `x0`.
    pub fn initial(algorithm: Algorithm, problem: &SeparableProblem, x0: &[f64]) -> Result<Self> {
        problem.check_decision(x0)?;
        let Dims {
            num_agents: nag,
            num_ineq: p,
            num_eq: q,
            ..
        } = problem.dims();
        Ok(match algorithm {
            Algorithm::SpSgf => NetworkState {
                x: x0.to_vec(),
                v: vec![0.0; x0.len()],
                y: vec![0.0; nag * p],
                z: vec![0.0; nag * q],
                lambda: vec![0.0; nag * p],
                mu: vec![0.0; nag * q],
            },
            Algorithm::SpCm => NetworkState {
                x: Vec::new(),
                v: x0.to_vec(),
                y: vec![0.0; nag * p],
                z: vec![0.0; nag * q],
                lambda: vec![0.0; nag * p],
                mu: vec![0.0; nag * q],
            },
            Algorithm::Sp => NetworkState {
                x: x0.to_vec(),
                lambda: vec![0.0; p],
                mu: vec![0.0; q],
                ..Default::default()
            },
            Algorithm::CentralizedSgf => NetworkState {
                x: x0.to_vec(),
                ..Default::default()
            },
        })
    }

    /// Checks block lengths against what `algorithm` expects for `problem`.
    pub fn check_dims(&self, algorithm: Algorithm, problem: &SeparableProblem) -> Result<()> {
        let Dims {
            num_agents: nag,
            num_ineq: p,
            num_eq: q,
            ..
        } = problem.dims();
        let nn = problem.decision_len();
        let expected: [usize; 6] = match algorithm {
            Algorithm::SpSgf => [nn, nn, nag * p, nag * q, nag * p, nag * q],
            Algorithm::SpCm => [0, nn, nag * p, nag * q, nag * p, nag * q],
            Algorithm::Sp => [nn, 0, 0, 0, p, q],
            Algorithm::CentralizedSgf => [nn, 0, 0, 0, 0, 0],
        };
        let names = ["x", "v", "y", "z", "lambda", "mu"];
        for ((block, want), name) in self.blocks().iter().zip(expected).zip(names) {
            if block.len() != want {
                return Err(Error::Dimension(format!(
                    "{algorithm} state block `{name}` has length {}, expected {want}",
                    block.len()
                )));
            }
        }
        Ok(())
    }
}

/// `[a]_b^+`: `a` if `b > 0`, `max(0, a)` if `b == 0`.
pub fn positive_projection(a: f64, b: f64) -> Result<f64> {
    if b < 0.0 || b.is_nan() {
        return Err(Error::Parameter(format!(
            "projection base must be >= 0, got {b}"
        )));
    }
    Ok(project(a, b))
}

#[inline]
fn project(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a
    } else {
        a.max(0.0)
    }
}

/// A field evaluation: the derivative plus what the diagnostics need.
#[derive(Debug, Clone)]
pub struct FieldEval {
    pub derivative: NetworkState,
    /// Per-agent subproblem solutions (`sp-sgf`), or the single centralized one.
    pub qp: Vec<QpSolution>,
    /// `-|S|^2 + alpha sum phi g_hat + alpha sum chi h_hat` at the evaluated state
    /// (`sp-sgf` only): the bound on `grad f(x) . xdot`.
    pub descent_bound: Option<f64>,
}

/// A (possibly nonsmooth) autonomous vector field on [`NetworkState`].
pub trait VectorField: Sync {
    fn algorithm(&self) -> Algorithm;

    fn problem(&self) -> &SeparableProblem;

    fn evaluate(&self, state: &NetworkState) -> Result<FieldEval>;

    /// The block reported as the decision variable (`v` for `sp-cm`, else `x`).
    fn decision<'s>(&self, state: &'s NetworkState) -> &'s [f64] {
        self.algorithm().decision(state)
    }
}

/// Builds agent `i`'s safe-gradient-flow subproblem at `(x_i, y_{N_i}, z_{N_i})`.
pub fn local_sgf_qp(
    problem: &SeparableProblem,
    alpha: f64,
    agent: usize,
    x: &[f64],
    y: &[f64],
    z: &[f64],
) -> LocalQp {
    let Dims {
        agent_dim: n,
        num_ineq: p,
        num_eq: q,
        ..
    } = problem.dims();
    let graph = problem.graph();
    let xi = problem.agent_block(x, agent);
    let gradient = DVector::from_vec(problem.objective(agent).gradient(xi));
    let mut ineq_normals = DMatrix::zeros(p, n);
    let mut ineq_bounds = DVector::zeros(p);
    for k in 0..p {
        let g = problem.ineq(agent, k);
        ineq_normals.row_mut(k).copy_from_slice(&g.gradient(xi));
        let mismatch: f64 = graph
            .nbrs(agent)
            .iter()
            .map(|&j| y[agent * p + k] - y[j * p + k])
            .sum();
        ineq_bounds[k] = -alpha * (g.value(xi) + mismatch);
    }
    let mut eq_normals = DMatrix::zeros(q, n);
    let mut eq_bounds = DVector::zeros(q);
    for l in 0..q {
        let h = problem.eq(agent, l);
        eq_normals.row_mut(l).copy_from_slice(&h.gradient(xi));
        let mismatch: f64 = graph
            .nbrs(agent)
            .iter()
            .map(|&j| z[agent * q + l] - z[j * q + l])
            .sum();
        eq_bounds[l] = -alpha * (h.value(xi) + mismatch);
    }
    LocalQp {
        gradient,
        ineq_normals,
        ineq_bounds,
        eq_normals,
        eq_bounds,
    }
}

fn solve_agent_qp(qp: &LocalQp) -> std::result::Result<QpSolution, crate::localqp::QpError> {
    if qp.num_ineq() == 1 && qp.num_eq() == 0 {
        let normal: Vec<f64> = qp.ineq_normals.row(0).iter().copied().collect();
        if normal.iter().any(|a| *a != 0.0) {
            return solve_single_inequality(qp.gradient.as_slice(), &normal, qp.ineq_bounds[0]);
        }
    }
    solve_local_qp(qp)
}

/// `S_alpha(x, y, z)`: every agent's safe-gradient direction and subproblem solution.
pub fn safe_gradient_directions(
    problem: &SeparableProblem,
    alpha: f64,
    x: &[f64],
    y: &[f64],
    z: &[f64],
    parallel: bool,
) -> Result<Vec<QpSolution>> {
    let solve = |i: usize| {
        let qp = local_sgf_qp(problem, alpha, i, x, y, z);
        solve_agent_qp(&qp).map_err(|source| Error::LocalQp { agent: i, source })
    };
    if parallel {
        (0..problem.num_agents())
            .into_par_iter()
            .map(solve)
            .collect()
    } else {
        (0..problem.num_agents()).map(solve).collect()
    }
}

/// Fast block shared by `sp-sgf` and `sp-cm`, divided by `tau`.
fn fast_block(
    problem: &SeparableProblem,
    params: &AlgorithmParams,
    state: &NetworkState,
    out: &mut NetworkState,
) {
    let Dims {
        num_agents: nag,
        agent_dim: n,
        num_ineq: p,
        num_eq: q,
    } = problem.dims();
    let graph = problem.graph();
    let inv_tau = 1.0 / params.tau;
    let eps = params.epsilon;
    for i in 0..nag {
        let vi = problem.agent_block(&state.v, i);
        let dv = &mut out.v[i * n..(i + 1) * n];
        problem.objective(i).gradient_into(vi, dv);
        for k in 0..p {
            problem
                .ineq(i, k)
                .add_gradient(vi, state.lambda[i * p + k], dv);
        }
        for l in 0..q {
            problem.eq(i, l).add_gradient(vi, state.mu[i * q + l], dv);
        }
        for d in dv.iter_mut() {
            *d *= -inv_tau;
        }
        let nbrs = graph.nbrs(i);
        for k in 0..p {
            let idx = i * p + k;
            let lam_mismatch: f64 = nbrs
                .iter()
                .map(|&j| state.lambda[idx] - state.lambda[j * p + k])
                .sum();
            out.y[idx] = (-eps * state.y[idx] - lam_mismatch) * inv_tau;
            let y_mismatch: f64 = nbrs
                .iter()
                .map(|&j| state.y[idx] - state.y[j * p + k])
                .sum();
            let g_hat = problem.ineq(i, k).value(vi) + y_mismatch;
            out.lambda[idx] = project(g_hat, state.lambda[idx]) * inv_tau;
        }
        for l in 0..q {
            let idx = i * q + l;
            let mu_mismatch: f64 = nbrs
                .iter()
                .map(|&j| state.mu[idx] - state.mu[j * q + l])
                .sum();
            out.z[idx] = (-eps * state.z[idx] - mu_mismatch) * inv_tau;
            let z_mismatch: f64 = nbrs
                .iter()
                .map(|&j| state.z[idx] - state.z[j * q + l])
                .sum();
            out.mu[idx] = (problem.eq(i, l).value(vi) + z_mismatch) * inv_tau;
        }
    }
}

/// The SP-SGF cascade.
#[derive(Debug, Clone)]
pub struct SpSgfField<'a> {
    pub problem: &'a SeparableProblem,
    pub params: AlgorithmParams,
    /// Solve the per-agent subproblems on the rayon pool.
    pub parallel: bool,
}

impl<'a> SpSgfField<'a> {
    pub fn new(problem: &'a SeparableProblem, params: AlgorithmParams) -> Self {
        SpSgfField {
            problem,
            params,
            parallel: false,
        }
    }
}

impl VectorField for SpSgfField<'_> {
    fn algorithm(&self) -> Algorithm {
        Algorithm::SpSgf
    }

    fn problem(&self) -> &SeparableProblem {
        self.problem
    }

    fn evaluate(&self, state: &NetworkState) -> Result<FieldEval> {
        state.check_dims(Algorithm::SpSgf, self.problem)?;
        let mut d = state.zeros_like();
        fast_block(self.problem, &self.params, state, &mut d);
        let sols = safe_gradient_directions(
            self.problem,
            self.params.alpha,
            &state.x,
            &state.y,
            &state.z,
            self.parallel,
        )?;
        let n = self.problem.agent_dim();
        for (i, sol) in sols.iter().enumerate() {
            d.x[i * n..(i + 1) * n].copy_from_slice(sol.direction.as_slice());
        }
        let (g_hat, h_hat) = reformulated_constraints(self.problem, &state.x, &state.y, &state.z);
        let (p, q) = (self.problem.num_ineq(), self.problem.num_eq());
        let mut bound = -d.x.iter().map(|v| v * v).sum::<f64>();
        for (i, sol) in sols.iter().enumerate() {
            for k in 0..p {
                bound += self.params.alpha * sol.ineq_multipliers[k] * g_hat[i * p + k];
            }
            for l in 0..q {
                bound += self.params.alpha * sol.eq_multipliers[l] * h_hat[i * q + l];
            }
        }
        Ok(FieldEval {
            derivative: d,
            qp: sols,
            descent_bound: Some(bound),
        })
    }
}

/// Projected saddle-point dynamics on the constraint-mismatch reformulation.
#[derive(Debug, Clone)]
pub struct SpCmField<'a> {
    pub problem: &'a SeparableProblem,
    pub params: AlgorithmParams,
}

impl VectorField for SpCmField<'_> {
    fn algorithm(&self) -> Algorithm {
        Algorithm::SpCm
    }

    fn problem(&self) -> &SeparableProblem {
        self.problem
    }

    fn evaluate(&self, state: &NetworkState) -> Result<FieldEval> {
        state.check_dims(Algorithm::SpCm, self.problem)?;
        let mut d = state.zeros_like();
        fast_block(self.problem, &self.params, state, &mut d);
        Ok(FieldEval {
            derivative: d,
            qp: Vec::new(),
            descent_bound: None,
        })
    }
}

/// Projected saddle-point dynamics of the original (coupled) problem.
#[derive(Debug, Clone)]
pub struct SpField<'a> {
    pub problem: &'a SeparableProblem,
}

impl VectorField for SpField<'_> {
    fn algorithm(&self) -> Algorithm {
        Algorithm::Sp
    }

    fn problem(&self) -> &SeparableProblem {
        self.problem
    }

    fn evaluate(&self, state: &NetworkState) -> Result<FieldEval> {
        state.check_dims(Algorithm::Sp, self.problem)?;
        let prob = self.problem;
        let Dims {
            num_agents: nag,
            agent_dim: n,
            num_ineq: p,
            num_eq: q,
        } = prob.dims();
        let mut d = state.zeros_like();
        for i in 0..nag {
            let xi = prob.agent_block(&state.x, i);
            let dx = &mut d.x[i * n..(i + 1) * n];
            prob.objective(i).gradient_into(xi, dx);
            for k in 0..p {
                prob.ineq(i, k).add_gradient(xi, state.lambda[k], dx);
            }
            for l in 0..q {
                prob.eq(i, l).add_gradient(xi, state.mu[l], dx);
            }
            dx.iter_mut().for_each(|v| *v = -*v);
        }
        let agg = prob.eval_aggregate(&state.x)?;
        for k in 0..p {
            d.lambda[k] = project(agg.g[k], state.lambda[k]);
        }
        d.mu.copy_from_slice(&agg.h);
        Ok(FieldEval {
            derivative: d,
            qp: Vec::new(),
            descent_bound: None,
        })
    }
}

/// Safe gradient flow `F_alpha` of the coupled problem (non-distributed reference).
#[derive(Debug, Clone)]
pub struct CentralizedSgfField<'a> {
    pub problem: &'a SeparableProblem,
    pub alpha: f64,
}

impl CentralizedSgfField<'_> {
    pub fn qp(&self, x: &[f64]) -> Result<LocalQp> {
        let prob = self.problem;
        let nn = prob.decision_len();
        let (p, q) = (prob.num_ineq(), prob.num_eq());
        let agg = prob.eval_aggregate(x)?;
        let mut ineq_normals = DMatrix::zeros(p, nn);
        for k in 0..p {
            ineq_normals
                .row_mut(k)
                .copy_from_slice(&prob.ineq_gradient(x, k));
        }
        let mut eq_normals = DMatrix::zeros(q, nn);
        for l in 0..q {
            eq_normals
                .row_mut(l)
                .copy_from_slice(&prob.eq_gradient(x, l));
        }
        Ok(LocalQp {
            gradient: DVector::from_vec(prob.objective_gradient(x)),
            ineq_normals,
            ineq_bounds: DVector::from_iterator(p, agg.g.iter().map(|g| -self.alpha * g)),
            eq_normals,
            eq_bounds: DVector::from_iterator(q, agg.h.iter().map(|h| -self.alpha * h)),
        })
    }
}

impl VectorField for CentralizedSgfField<'_> {
    fn algorithm(&self) -> Algorithm {
        Algorithm::CentralizedSgf
    }

    fn problem(&self) -> &SeparableProblem {
        self.problem
    }

    fn evaluate(&self, state: &NetworkState) -> Result<FieldEval> {
        state.check_dims(Algorithm::CentralizedSgf, self.problem)?;
        let qp = self.qp(&state.x)?;
        let sol = solve_local_qp(&qp).map_err(Error::CentralizedQp)?;
        let mut d = state.zeros_like();
        d.x.copy_from_slice(sol.direction.as_slice());
        Ok(FieldEval {
            derivative: d,
            qp: vec![sol],
            descent_bound: None,
        })
    }
}

/// Derivative of the SP-SGF cascade at `state`.
pub fn spsgf_field(
    problem: &SeparableProblem,
    params: &AlgorithmParams,
    state: &NetworkState,
) -> Result<NetworkState> {
    Ok(SpSgfField::new(problem, *params)
        .evaluate(state)?
        .derivative)
}

/// Derivative of the SP baseline at `(x, lambda, mu)`.
pub fn sp_field(problem: &SeparableProblem, state: &NetworkState) -> Result<NetworkState> {
    Ok(SpField { problem }.evaluate(state)?.derivative)
}

/// Derivative of the SP-CM baseline at `(v, y, z, lambda, mu)`.
pub fn spcm_field(
    problem: &SeparableProblem,
    params: &AlgorithmParams,
    state: &NetworkState,
) -> Result<NetworkState> {
    Ok(SpCmField {
        problem,
        params: *params,
    }
    .evaluate(state)?
    .derivative)
}

/// `F_alpha(x)` for the coupled problem.
pub fn centralized_sgf_field(
    problem: &SeparableProblem,
    alpha: f64,
    x: &[f64],
) -> Result<Vec<f64>> {
    let field = CentralizedSgfField { problem, alpha };
    let sol = solve_local_qp(&field.qp(x)?).map_err(Error::CentralizedQp)?;
    Ok(sol.direction.as_slice().to_vec())
}

/// Boxed field for `algorithm`.
pub fn make_field<'a>(
    algorithm: Algorithm,
    problem: &'a SeparableProblem,
    params: AlgorithmParams,
    parallel: bool,
) -> Box<dyn VectorField + 'a> {
    match algorithm {
        Algorithm::SpSgf => Box::new(SpSgfField {
            problem,
            params,
            parallel,
        }),
        Algorithm::SpCm => Box::new(SpCmField { problem, params }),
        Algorithm::Sp => Box::new(SpField { problem }),
        Algorithm::CentralizedSgf => Box::new(CentralizedSgfField {
            problem,
            alpha: params.alpha,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::ScalarFunction;
    use crate::graph::Graph;
    use crate::problem::{build_resource_allocation, resource_initial_x};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    #[test]
    fn projection_examples() {
        assert_eq!(positive_projection(-2.0, 0.0).unwrap(), 0.0);
        assert_eq!(positive_projection(-2.0, 1.0).unwrap(), -2.0);
        assert_eq!(positive_projection(3.0, 0.0).unwrap(), 3.0);
        assert!(positive_projection(1.0, -0.1).is_err());
    }

    #[test]
    fn algorithm_names_round_trip() {
        for a in Algorithm::ALL {
            assert_eq!(a.name().parse::<Algorithm>().unwrap(), a);
        }
        assert!("gradient".parse::<Algorithm>().is_err());
    }

    #[test]
    fn per_agent_state_dimension() {
        let prob = build_resource_allocation();
        let s = NetworkState::initial(Algorithm::SpSgf, &prob, &resource_initial_x()).unwrap();
        // 2n + 2p + 2q = 8 per agent, 104 in total.
        assert_eq!(s.len(), 13 * 8);
        let cm = NetworkState::initial(Algorithm::SpCm, &prob, &resource_initial_x()).unwrap();
        assert_eq!(cm.len(), 13 * 6);
        let sp = NetworkState::initial(Algorithm::Sp, &prob, &resource_initial_x()).unwrap();
        assert_eq!(sp.len(), 28);
    }

    #[test]
    fn clamped_multiplier_does_not_decrease() {
        let prob = build_resource_allocation();
        let mut s = NetworkState::initial(Algorithm::SpSgf, &prob, &resource_initial_x()).unwrap();
        // Large v_2 makes g_i(v_i) = -3/13 + exp(-v_i2) negative everywhere.
        for i in 0..13 {
            s.v[2 * i + 1] = 5.0;
        }
        let d = spsgf_field(&prob, &AlgorithmParams::default(), &s).unwrap();
        assert!(d.lambda.iter().all(|l| *l == 0.0));
    }

    #[test]
    fn spcm_blocks_match_spsgf() {
        let prob = build_resource_allocation();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let params = AlgorithmParams {
            tau: 0.7,
            ..Default::default()
        };
        let mut s = NetworkState::initial(Algorithm::SpSgf, &prob, &resource_initial_x()).unwrap();
        for b in [&mut s.v, &mut s.y, &mut s.z, &mut s.mu] {
            b.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        }
        s.lambda
            .iter_mut()
            .for_each(|v| *v = rng.gen_range(0.0..1.0));
        let full = spsgf_field(&prob, &params, &s).unwrap();
        let mut cm_state = s.clone();
        cm_state.x.clear();
        let cm = spcm_field(&prob, &params, &cm_state).unwrap();
        assert_eq!(cm.v, full.v);
        assert_eq!(cm.y, full.y);
        assert_eq!(cm.z, full.z);
        assert_eq!(cm.lambda, full.lambda);
        assert_eq!(cm.mu, full.mu);
    }

    #[test]
    fn fast_block_ignores_x() {
        let prob = build_resource_allocation();
        let params = AlgorithmParams::default();
        let s = NetworkState::initial(Algorithm::SpSgf, &prob, &resource_initial_x()).unwrap();
        let mut s2 = s.clone();
        s2.x.iter_mut().for_each(|v| *v += 3.0);
        let (a, b) = (
            spsgf_field(&prob, &params, &s).unwrap(),
            spsgf_field(&prob, &params, &s2).unwrap(),
        );
        assert_eq!(
            (a.v, a.y, a.z, a.lambda, a.mu),
            (b.v, b.y, b.z, b.lambda, b.mu)
        );
    }

    #[test]
    fn sp_reduces_to_gradient_flow_without_constraints() {
        let graph = Arc::new(Graph::line(3).unwrap());
        let centers = [[1.0, 2.0], [0.0, -1.0], [3.0, 0.5]];
        let prob = SeparableProblem::new(
            graph,
            2,
            centers
                .iter()
                .map(|c| ScalarFunction::half_squared_distance(c))
                .collect(),
            vec![vec![]; 3],
            vec![vec![]; 3],
        )
        .unwrap();
        let x = vec![0.5, 0.5, -1.0, 2.0, 0.0, 0.0];
        let s = NetworkState::initial(Algorithm::Sp, &prob, &x).unwrap();
        let d = sp_field(&prob, &s).unwrap();
        let grad = prob.objective_gradient(&x);
        for (a, b) in d.x.iter().zip(&grad) {
            assert_eq!(*a, -b);
        }
        let f = centralized_sgf_field(&prob, 1.0, &x).unwrap();
        for (a, b) in f.iter().zip(&grad) {
            assert!((a + b).abs() < 1e-14);
        }
    }

    #[test]
    fn centralized_equality_row_holds() {
        let prob = build_resource_allocation();
        let x: Vec<f64> = (0..26).map(|i| 0.1 * i as f64 - 1.0).collect();
        let f = centralized_sgf_field(&prob, 1.0, &x).unwrap();
        let grad_h = prob.eq_gradient(&x, 0);
        let lhs: f64 = grad_h.iter().zip(&f).map(|(a, b)| a * b).sum();
        let h = prob.eval_aggregate(&x).unwrap().h[0];
        assert!((lhs + h).abs() < 1e-8);
    }

    #[test]
    fn wrong_state_shape_rejected() {
        let prob = build_resource_allocation();
        let mut s = NetworkState::initial(Algorithm::SpSgf, &prob, &resource_initial_x()).unwrap();
        s.lambda.pop();
        assert!(matches!(
            spsgf_field(&prob, &AlgorithmParams::default(), &s),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn descent_bound_equals_directional_derivative() {
        let prob = build_resource_allocation();
        let s = NetworkState::initial(Algorithm::SpSgf, &prob, &resource_initial_x()).unwrap();
        let eval = SpSgfField::new(&prob, AlgorithmParams::default())
            .evaluate(&s)
            .unwrap();
        let grad = prob.objective_gradient(&s.x);
        let lhs: f64 = grad
            .iter()
            .zip(&eval.derivative.x)
            .map(|(a, b)| a * b)
            .sum();
        assert!(lhs <= eval.descent_bound.unwrap() + 1e-9);
    }
}
