//! Separable network problems with globally coupled constraints:
//!
//! ```text
//! minimize    sum_i f_i(x_i)
//! subject to  sum_i g_i^k(x_i) <= 0,   k = 1..p
//!             sum_i h_i^l(x_i)  = 0,   l = 1..q
//! ```
//!
//! with `f_i` strongly convex, `g_i^k` convex and `h_i^l` affine. Every agent
//! contributes one summand to every constraint; non-participating agents
//! contribute [`ScalarFunction::Zero`].

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::function::ScalarFunction;
use crate::graph::{Graph, GraphSpec};

/// Resource weights of the 13-agent allocation example.
pub const RESOURCE_WEIGHTS: [f64; 13] = [
    1.0, 3.0, 2.0, 1.0, 1.0, 1.0, 2.0, 4.0, 1.0, 1.0, 0.5, 2.0, 1.0,
];

/// Initial allocations of the 13-agent example, one `[x_i1, x_i2]` per agent.
pub const RESOURCE_INITIAL_X: [[f64; 2]; 13] = [
    [3.0, 5.0],
    [1.0, 4.0],
    [-1.0, 3.0],
    [-2.0, 2.0],
    [3.0, 1.0],
    [0.0, 10.0],
    [0.0, 9.0],
    [0.0, 8.0],
    [0.0, 7.0],
    [0.0, 6.0],
    [0.0, 5.0],
    [-2.0, 4.0],
    [4.0, 3.0],
];

/// Total demand of resource 1 (equality) in the allocation example.
pub const RESOURCE_DEMAND: f64 = 5.0;
/// Budget of the exponential cost of resource 2 (inequality).
pub const RESOURCE_BUDGET: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dims {
    pub num_agents: usize,
    pub agent_dim: usize,
    pub num_ineq: usize,
    pub num_eq: usize,
}

#[derive(Debug, Clone)]
pub struct SeparableProblem {
    dims: Dims,
    objectives: Vec<ScalarFunction>,
    /// `N*p`, agent-major.
    ineq: Vec<ScalarFunction>,
    /// `N*q`, agent-major.
    eq: Vec<ScalarFunction>,
    graph: Arc<Graph>,
}

/// Aggregate objective and constraint values at a network point.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub objective: f64,
    pub g: Vec<f64>,
    pub h: Vec<f64>,
}

impl SeparableProblem {
    /// `ineq[i][k]` is `g_i^k`, `eq[i][l]` is `h_i^l`. Every agent must list
    /// the same number of inequality and equality summands.
    pub fn new(
        graph: Arc<Graph>,
        agent_dim: usize,
        objectives: Vec<ScalarFunction>,
        ineq: Vec<Vec<ScalarFunction>>,
        eq: Vec<Vec<ScalarFunction>>,
    ) -> Result<Self> {
        let num_agents = graph.num_vertices();
        if !graph.is_connected() {
            return Err(Error::Graph("communication graph must be connected".into()));
        }
        if agent_dim == 0 {
            return Err(Error::Dimension("agent dimension must be positive".into()));
        }
        for (what, len) in [
            ("objectives", objectives.len()),
            ("inequality rows", ineq.len()),
            ("equality rows", eq.len()),
        ] {
            if len != num_agents {
                return Err(Error::Dimension(format!(
                    "{what}: got {len} agents, graph has {num_agents}"
                )));
            }
        }
        let num_ineq = ineq[0].len();
        let num_eq = eq[0].len();
        if let Some(i) = ineq.iter().position(|r| r.len() != num_ineq) {
            return Err(Error::Dimension(format!(
                "agent {i} has {} inequality summands, agent 0 has {num_ineq}",
                ineq[i].len()
            )));
        }
        if let Some(i) = eq.iter().position(|r| r.len() != num_eq) {
            return Err(Error::Dimension(format!(
                "agent {i} has {} equality summands, agent 0 has {num_eq}",
                eq[i].len()
            )));
        }
        for (i, f) in objectives.iter().enumerate() {
            f.check_dim(agent_dim)?;
            if !f.is_convex() {
                return Err(Error::Parameter(format!(
                    "objective of agent {i} is not convex"
                )));
            }
        }
        for (i, row) in ineq.iter().enumerate() {
            for (k, g) in row.iter().enumerate() {
                g.check_dim(agent_dim)?;
                if !g.is_convex() {
                    return Err(Error::Parameter(format!(
                        "inequality summand g_{i}^{k} is not convex"
                    )));
                }
            }
        }
        for (i, row) in eq.iter().enumerate() {
            for (l, h) in row.iter().enumerate() {
                h.check_dim(agent_dim)?;
                if !h.is_affine() {
                    return Err(Error::Parameter(format!(
                        "equality summand h_{i}^{l} is not affine"
                    )));
                }
            }
        }
        Ok(SeparableProblem {
            dims: Dims {
                num_agents,
                agent_dim,
                num_ineq,
                num_eq,
            },
            objectives,
            ineq: ineq.into_iter().flatten().collect(),
            eq: eq.into_iter().flatten().collect(),
            graph,
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn num_agents(&self) -> usize {
        self.dims.num_agents
    }

    pub fn agent_dim(&self) -> usize {
        self.dims.agent_dim
    }

    pub fn num_ineq(&self) -> usize {
        self.dims.num_ineq
    }

    pub fn num_eq(&self) -> usize {
        self.dims.num_eq
    }

    pub fn graph(&self) -> &Graph {
        &self.graph
    }

    pub fn shared_graph(&self) -> Arc<Graph> {
        Arc::clone(&self.graph)
    }

    pub fn objective(&self, i: usize) -> &ScalarFunction {
        &self.objectives[i]
    }

    pub fn ineq(&self, i: usize, k: usize) -> &ScalarFunction {
        &self.ineq[i * self.dims.num_ineq + k]
    }

    pub fn eq(&self, i: usize, l: usize) -> &ScalarFunction {
        &self.eq[i * self.dims.num_eq + l]
    }

    /// Agent `i`'s slice of a stacked `N*n` vector.
    pub fn agent_block<'a>(&self, x: &'a [f64], i: usize) -> &'a [f64] {
        let n = self.dims.agent_dim;
        &x[i * n..(i + 1) * n]
    }

    /// Length of a stacked decision vector.
    pub fn decision_len(&self) -> usize {
        self.dims.num_agents * self.dims.agent_dim
    }

    pub fn check_decision(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.decision_len() {
            return Err(Error::Dimension(format!(
                "decision vector has length {}, expected {}",
                x.len(),
                self.decision_len()
            )));
        }
        Ok(())
    }

    /// `sum_i f_i(x_i)` together with aggregate `g^k(x)` and `h^l(x)`.
    pub fn eval_aggregate(&self, x: &[f64]) -> Result<Aggregate> {
        self.check_decision(x)?;
        let Dims {
            num_agents,
            num_ineq,
            num_eq,
            ..
        } = self.dims;
        let mut agg = Aggregate {
            objective: 0.0,
            g: vec![0.0; num_ineq],
            h: vec![0.0; num_eq],
        };
        for i in 0..num_agents {
            let xi = self.agent_block(x, i);
            agg.objective += self.objectives[i].value(xi);
            for k in 0..num_ineq {
                agg.g[k] += self.ineq(i, k).value(xi);
            }
            for l in 0..num_eq {
                agg.h[l] += self.eq(i, l).value(xi);
            }
        }
        Ok(agg)
    }

    /// `g^k(x) <= tol` for all `k` and `|h^l(x)| <= tol` for all `l`.
    pub fn is_feasible(&self, x: &[f64], tol: f64) -> Result<bool> {
        if tol.is_nan() || tol < 0.0 {
            return Err(Error::Parameter(format!(
                "tolerance must be >= 0, got {tol}"
            )));
        }
        let agg = self.eval_aggregate(x)?;
        Ok(agg.g.iter().all(|g| *g <= tol) && agg.h.iter().all(|h| h.abs() <= tol))
    }

    /// Stacked gradient of `sum_i f_i`.
    pub fn objective_gradient(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dims.agent_dim;
        let mut grad = vec![0.0; x.len()];
        for i in 0..self.dims.num_agents {
            self.objectives[i].gradient_into(self.agent_block(x, i), &mut grad[i * n..(i + 1) * n]);
        }
        grad
    }

    /// Stacked gradient of the aggregate inequality `g^k`.
    pub fn ineq_gradient(&self, x: &[f64], k: usize) -> Vec<f64> {
        let n = self.dims.agent_dim;
        let mut grad = vec![0.0; x.len()];
        for i in 0..self.dims.num_agents {
            self.ineq(i, k)
                .gradient_into(self.agent_block(x, i), &mut grad[i * n..(i + 1) * n]);
        }
        grad
    }

    /// Stacked gradient of the aggregate equality `h^l`.
    pub fn eq_gradient(&self, x: &[f64], l: usize) -> Vec<f64> {
        let n = self.dims.agent_dim;
        let mut grad = vec![0.0; x.len()];
        for i in 0..self.dims.num_agents {
            self.eq(i, l)
                .gradient_into(self.agent_block(x, i), &mut grad[i * n..(i + 1) * n]);
        }
        grad
    }
}

/// The constraint-mismatch reformulation regularized by `eps/2 (|y|^2 + |z|^2)`.
#[derive(Debug, Clone)]
pub struct RegularizedProblem {
    pub base: SeparableProblem,
    pub epsilon: f64,
}

impl RegularizedProblem {
    pub fn new(base: SeparableProblem, epsilon: f64) -> Result<Self> {
        if epsilon.is_nan() || epsilon <= 0.0 {
            return Err(Error::Parameter(format!(
                "epsilon must be > 0, got {epsilon}"
            )));
        }
        Ok(RegularizedProblem { base, epsilon })
    }

    /// `f_i(x_i) + eps/2 |y_i|^2 + eps/2 |z_i|^2`
    pub fn agent_objective(&self, i: usize, xi: &[f64], yi: &[f64], zi: &[f64]) -> f64 {
        let sq = |v: &[f64]| v.iter().map(|a| a * a).sum::<f64>();
        self.base.objective(i).value(xi) + 0.5 * self.epsilon * (sq(yi) + sq(zi))
    }

    /// Sum of the per-agent augmented objectives.
    pub fn objective(&self, x: &[f64], y: &[f64], z: &[f64]) -> f64 {
        let Dims {
            num_agents,
            num_ineq: p,
            num_eq: q,
            ..
        } = self.base.dims();
        (0..num_agents)
            .map(|i| {
                self.agent_objective(
                    i,
                    self.base.agent_block(x, i),
                    &y[i * p..(i + 1) * p],
                    &z[i * q..(i + 1) * q],
                )
            })
            .sum()
    }

    /// Reformulated constraint values `(g_i^k + (L y^k)_i, h_i^l + (L z^l)_i)`, agent-major.
    pub fn local_constraints(&self, x: &[f64], y: &[f64], z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        reformulated_constraints(&self.base, x, y, z)
    }
}

/// `(g_i^k(x_i) + sum_{j in N_i}(y_i^k - y_j^k), h_i^l(x_i) + sum_{j in N_i}(z_i^l - z_j^l))`
/// for all agents, agent-major.
pub fn reformulated_constraints(
    problem: &SeparableProblem,
    x: &[f64],
    y: &[f64],
    z: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let Dims {
        num_agents,
        num_ineq: p,
        num_eq: q,
        ..
    } = problem.dims();
    let graph = problem.graph();
    let mut g_hat = vec![0.0; num_agents * p];
    let mut h_hat = vec![0.0; num_agents * q];
    for i in 0..num_agents {
        let xi = problem.agent_block(x, i);
        for k in 0..p {
            let mismatch: f64 = graph
                .nbrs(i)
                .iter()
                .map(|&j| y[i * p + k] - y[j * p + k])
                .sum();
            g_hat[i * p + k] = problem.ineq(i, k).value(xi) + mismatch;
        }
        for l in 0..q {
            let mismatch: f64 = graph
                .nbrs(i)
                .iter()
                .map(|&j| z[i * q + l] - z[j * q + l])
                .sum();
            h_hat[i * q + l] = problem.eq(i, l).value(xi) + mismatch;
        }
    }
    (g_hat, h_hat)
}

/// The 13-agent, two-resource allocation problem on a line graph.
///
/// `h = 5 - sum_i p_i x_i1` and `g = -3 + sum_i exp(-x_i2)` with the constants
/// split evenly across agents so each summand depends only on `x_i`.
pub fn build_resource_allocation() -> SeparableProblem {
    build_resource_allocation_with(&RESOURCE_WEIGHTS, Arc::new(Graph::line(13).unwrap()))
        .expect("built-in problem is well formed")
}

/// Resource allocation with arbitrary weights and topology.
pub fn build_resource_allocation_with(
    weights: &[f64],
    graph: Arc<Graph>,
) -> Result<SeparableProblem> {
    let n_agents = weights.len();
    let share = 1.0 / n_agents as f64;
    let objectives = vec![ScalarFunction::half_squared_distance(&[0.0, 0.0]); n_agents];
    let ineq = (0..n_agents)
        .map(|_| {
            vec![ScalarFunction::ExpAffine {
                scale: 1.0,
                exponent: vec![0.0, -1.0],
                offset: 0.0,
                constant: -RESOURCE_BUDGET * share,
            }]
        })
        .collect();
    let eq = weights
        .iter()
        .map(|&w| {
            vec![ScalarFunction::affine(
                vec![-w, 0.0],
                RESOURCE_DEMAND * share,
            )]
        })
        .collect();
    SeparableProblem::new(graph, 2, objectives, ineq, eq)
}

/// Stacked initial allocations of the 13-agent example.
pub fn resource_initial_x() -> Vec<f64> {
    RESOURCE_INITIAL_X.iter().flatten().copied().collect()
}

/// Consensus reformulation of `min sum_i f_i(w)` over a shared decision `w`:
/// every agent keeps a copy `x_i` and the copies are tied by `(L (x) I_n) x = 0`,
/// one equality per Laplacian row and coordinate (`q = N*n`). Local
/// inequalities `gbar_i^j(x_i) <= 0` become global constraints in which only
/// agent `i` contributes.
pub fn build_consensus_problem(
    agent_dim: usize,
    local_objectives: Vec<ScalarFunction>,
    local_ineq_sets: Vec<Vec<ScalarFunction>>,
    graph: Arc<Graph>,
) -> Result<SeparableProblem> {
    let n_agents = graph.num_vertices();
    if !graph.is_connected() {
        return Err(Error::Graph("consensus requires a connected graph".into()));
    }
    if local_ineq_sets.len() != n_agents {
        return Err(Error::Dimension(format!(
            "got {} local inequality sets for {n_agents} agents",
            local_ineq_sets.len()
        )));
    }
    let lap = graph.laplacian();
    let owners: Vec<(usize, usize)> = local_ineq_sets
        .iter()
        .enumerate()
        .flat_map(|(i, set)| (0..set.len()).map(move |j| (i, j)))
        .collect();
    let ineq = (0..n_agents)
        .map(|i| {
            owners
                .iter()
                .map(|&(owner, j)| {
                    if owner == i {
                        local_ineq_sets[i][j].clone()
                    } else {
                        ScalarFunction::Zero
                    }
                })
                .collect()
        })
        .collect();
    let eq = (0..n_agents)
        .map(|i| {
            (0..n_agents)
                .flat_map(|row| (0..agent_dim).map(move |d| (row, d)))
                .map(|(row, d)| {
                    let coeff = lap[(row, i)];
                    if coeff == 0.0 {
                        ScalarFunction::Zero
                    } else {
                        let mut linear = vec![0.0; agent_dim];
                        linear[d] = coeff;
                        ScalarFunction::affine(linear, 0.0)
                    }
                })
                .collect()
        })
        .collect();
    SeparableProblem::new(graph, agent_dim, local_objectives, ineq, eq)
}

/// Declarative problem description, as found in run configurations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ProblemSpec {
    /// The two-resource allocation problem; weights default to the 13-agent example.
    ResourceAllocation {
        #[serde(default)]
        weights: Option<Vec<f64>>,
    },
    Consensus {
        agent_dim: usize,
        objectives: Vec<ScalarFunction>,
        #[serde(default)]
        local_ineq: Vec<Vec<ScalarFunction>>,
    },
    Custom {
        agent_dim: usize,
        objectives: Vec<ScalarFunction>,
        #[serde(default)]
        ineq: Vec<Vec<ScalarFunction>>,
        #[serde(default)]
        eq: Vec<Vec<ScalarFunction>>,
    },
}

impl ProblemSpec {
    pub fn build(&self, graph: &GraphSpec) -> Result<SeparableProblem> {
        let graph = Arc::new(graph.build()?);
        let n_agents = graph.num_vertices();
        let pad = |rows: &Vec<Vec<ScalarFunction>>| {
            if rows.is_empty() {
                vec![Vec::new(); n_agents]
            } else {
                rows.clone()
            }
        };
        match self {
            ProblemSpec::ResourceAllocation { weights } => {
                let w = weights.clone().unwrap_or_else(|| RESOURCE_WEIGHTS.to_vec());
                if w.len() != n_agents {
                    return Err(Error::Dimension(format!(
                        "{} weights for {n_agents} agents",
                        w.len()
                    )));
                }
                build_resource_allocation_with(&w, graph)
            }
            ProblemSpec::Consensus {
                agent_dim,
                objectives,
                local_ineq,
            } => build_consensus_problem(*agent_dim, objectives.clone(), pad(local_ineq), graph),
            ProblemSpec::Custom {
                agent_dim,
                objectives,
                ineq,
                eq,
            } => SeparableProblem::new(graph, *agent_dim, objectives.clone(), pad(ineq), pad(eq)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::function::finite_difference_gradient;
    use nalgebra::DVector;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resource_allocation_shape_and_weights() {
        let prob = build_resource_allocation();
        assert_eq!(
            prob.dims(),
            Dims {
                num_agents: 13,
                agent_dim: 2,
                num_ineq: 1,
                num_eq: 1
            }
        );
        assert_eq!(
            RESOURCE_WEIGHTS,
            [1.0, 3.0, 2.0, 1.0, 1.0, 1.0, 2.0, 4.0, 1.0, 1.0, 0.5, 2.0, 1.0]
        );
        assert_eq!(prob.graph().edges().len(), 12);
    }

    #[test]
    fn resource_allocation_at_initial_condition() {
        let prob = build_resource_allocation();
        let x0 = resource_initial_x();
        let agg = prob.eval_aggregate(&x0).unwrap();
        // sum p_i x_i1 = 3 + 3 - 2 - 2 + 3 - 4 + 4 = 5
        assert!(agg.h[0].abs() < 1e-14);
        let expected_g: f64 = -3.0
            + RESOURCE_INITIAL_X
                .iter()
                .map(|x| (-x[1]).exp())
                .sum::<f64>();
        assert!((agg.g[0] - expected_g).abs() < 1e-14);
        assert!((agg.g[0] - (-2.343_209_060_576_605)).abs() < 1e-12);
        assert!(prob.is_feasible(&x0, 1e-9).unwrap());
    }

    #[test]
    fn resource_allocation_at_origin() {
        let prob = build_resource_allocation();
        let agg = prob.eval_aggregate(&[0.0; 26]).unwrap();
        assert_eq!(agg.objective, 0.0);
        assert!((agg.h[0] - 5.0).abs() < 1e-14);
        assert!((agg.g[0] - 10.0).abs() < 1e-14);
        assert!(!prob.is_feasible(&[0.0; 26], 1e-9).unwrap());
        assert!(prob.is_feasible(&[0.0; 26], f64::INFINITY).unwrap());
    }

    #[test]
    fn eval_rejects_wrong_length() {
        let prob = build_resource_allocation();
        assert!(matches!(
            prob.eval_aggregate(&[0.0; 25]),
            Err(Error::Dimension(_))
        ));
        assert!(prob.is_feasible(&[0.0; 26], -1.0).is_err());
    }

    #[test]
    fn consensus_k2() {
        let graph = Arc::new(Graph::complete(2).unwrap());
        let objectives = vec![
            ScalarFunction::half_squared_distance(&[1.0]),
            ScalarFunction::half_squared_distance(&[3.0]),
        ];
        let prob = build_consensus_problem(1, objectives, vec![vec![], vec![]], graph).unwrap();
        assert_eq!(prob.num_eq(), 2);
        assert_eq!(prob.num_ineq(), 0);
        // Row 0: x1 - x2, row 1: x2 - x1.
        let agg = prob.eval_aggregate(&[2.0, 0.5]).unwrap();
        assert_eq!(agg.h, vec![1.5, -1.5]);
        assert_eq!(prob.eval_aggregate(&[0.7, 0.7]).unwrap().h, vec![0.0, 0.0]);
    }

    #[test]
    fn consensus_dimensions_and_disconnected() {
        let graph = Arc::new(Graph::line(4).unwrap());
        let objectives = vec![ScalarFunction::half_squared_distance(&[0.0, 0.0]); 4];
        let prob = build_consensus_problem(2, objectives.clone(), vec![vec![]; 4], graph).unwrap();
        assert_eq!((prob.num_ineq(), prob.num_eq()), (0, 8));

        let split = Arc::new(Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap());
        assert!(build_consensus_problem(2, objectives, vec![vec![]; 4], split).is_err());
    }

    #[test]
    fn consensus_local_inequalities_owned_by_one_agent() {
        let graph = Arc::new(Graph::line(3).unwrap());
        let objectives = vec![ScalarFunction::half_squared_distance(&[0.0]); 3];
        let local = vec![
            vec![ScalarFunction::affine(vec![1.0], -2.0)],
            vec![],
            vec![
                ScalarFunction::affine(vec![-1.0], 0.0),
                ScalarFunction::affine(vec![1.0], -5.0),
            ],
        ];
        let prob = build_consensus_problem(1, objectives, local, graph).unwrap();
        assert_eq!(prob.num_ineq(), 3);
        assert_eq!(prob.ineq(1, 0), &ScalarFunction::Zero);
        assert_eq!(prob.ineq(2, 0), &ScalarFunction::Zero);
        let agg = prob.eval_aggregate(&[1.0, 7.0, 4.0]).unwrap();
        assert_eq!(agg.g, vec![-1.0, -4.0, -1.0]);
    }

    #[test]
    fn rejects_non_affine_equality_and_nonconvex_inequality() {
        let graph = Arc::new(Graph::complete(2).unwrap());
        let obj = vec![ScalarFunction::half_squared_distance(&[0.0]); 2];
        let quad = ScalarFunction::half_squared_distance(&[0.0]);
        assert!(SeparableProblem::new(
            graph.clone(),
            1,
            obj.clone(),
            vec![vec![], vec![]],
            vec![vec![quad.clone()], vec![ScalarFunction::Zero]],
        )
        .is_err());
        let concave = ScalarFunction::ExpAffine {
            scale: -1.0,
            exponent: vec![1.0],
            offset: 0.0,
            constant: 0.0,
        };
        assert!(SeparableProblem::new(
            graph,
            1,
            obj,
            vec![vec![concave], vec![ScalarFunction::Zero]],
            vec![vec![], vec![]],
        )
        .is_err());
    }

    fn builtin_problems() -> Vec<SeparableProblem> {
        let line3 = Arc::new(Graph::line(3).unwrap());
        let consensus = build_consensus_problem(
            2,
            vec![
                ScalarFunction::half_squared_distance(&[1.0, 0.0]),
                ScalarFunction::half_squared_distance(&[0.0, 2.0]),
                ScalarFunction::half_squared_distance(&[-1.0, 1.0]),
            ],
            vec![
                vec![ScalarFunction::ExpAffine {
                    scale: 1.0,
                    exponent: vec![1.0, 0.5],
                    offset: 0.0,
                    constant: -2.0,
                }],
                vec![],
                vec![],
            ],
            line3,
        )
        .unwrap();
        vec![build_resource_allocation(), consensus]
    }

    #[test]
    fn registered_gradients_pass_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for prob in builtin_problems() {
            let n = prob.agent_dim();
            let mut funcs: Vec<&ScalarFunction> = Vec::new();
            for i in 0..prob.num_agents() {
                funcs.push(prob.objective(i));
                funcs.extend((0..prob.num_ineq()).map(|k| prob.ineq(i, k)));
                funcs.extend((0..prob.num_eq()).map(|l| prob.eq(i, l)));
            }
            for f in funcs {
                for _ in 0..100 {
                    let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-5.0..5.0)).collect();
                    let exact = DVector::from_vec(f.gradient(&x));
                    let fd = finite_difference_gradient(f, &x, 1e-6);
                    assert!(
                        (exact - fd).norm()
                            <= 1e-5
                                * f.gradient(&x)
                                    .iter()
                                    .map(|g| g * g)
                                    .sum::<f64>()
                                    .sqrt()
                                    .max(1.0)
                    );
                }
            }
        }
    }

    #[test]
    fn separability_affinity_and_convexity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for prob in builtin_problems() {
            let len = prob.decision_len();
            let n = prob.agent_dim();
            for _ in 0..50 {
                let x: Vec<f64> = (0..len).map(|_| rng.gen_range(-5.0..5.0)).collect();
                let agent = rng.gen_range(0..prob.num_agents());
                let mut x2 = x.clone();
                for d in 0..n {
                    x2[agent * n + d] += rng.gen_range(-1.0..1.0);
                }
                let a = prob.eval_aggregate(&x).unwrap();
                let b = prob.eval_aggregate(&x2).unwrap();
                let xi = prob.agent_block(&x, agent);
                let xi2 = prob.agent_block(&x2, agent);
                let df = prob.objective(agent).value(xi2) - prob.objective(agent).value(xi);
                assert!((b.objective - a.objective - df).abs() < 1e-9);
                for k in 0..prob.num_ineq() {
                    let dg = prob.ineq(agent, k).value(xi2) - prob.ineq(agent, k).value(xi);
                    assert!((b.g[k] - a.g[k] - dg).abs() < 1e-9);
                }
                for l in 0..prob.num_eq() {
                    let dh = prob.eq(agent, l).value(xi2) - prob.eq(agent, l).value(xi);
                    assert!((b.h[l] - a.h[l] - dh).abs() < 1e-9);
                }

                let t: f64 = rng.gen_range(0.0..1.0);
                let mid: Vec<f64> = xi
                    .iter()
                    .zip(xi2)
                    .map(|(u, v)| t * u + (1.0 - t) * v)
                    .collect();
                for i in 0..prob.num_agents() {
                    for l in 0..prob.num_eq() {
                        let h = prob.eq(i, l);
                        let lhs = h.value(&mid);
                        let rhs = t * h.value(xi) + (1.0 - t) * h.value(xi2);
                        assert!((lhs - rhs).abs() < 1e-9);
                        let (g0, g1) = (h.gradient(xi), h.gradient(xi2));
                        assert_eq!(g0, g1);
                    }
                    for k in 0..prob.num_ineq() {
                        let g = prob.ineq(i, k);
                        let half: Vec<f64> =
                            xi.iter().zip(xi2).map(|(u, v)| 0.5 * (u + v)).collect();
                        assert!(g.value(&half) <= 0.5 * (g.value(xi) + g.value(xi2)) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn regularized_objective_adds_mismatch_penalty() {
        let reg = RegularizedProblem::new(build_resource_allocation(), 0.5).unwrap();
        let v = reg.agent_objective(0, &[1.0, 2.0], &[2.0], &[-1.0]);
        assert!((v - (2.5 + 0.25 * 5.0)).abs() < 1e-15);
        assert!(RegularizedProblem::new(build_resource_allocation(), 0.0).is_err());
    }

    #[test]
    fn spec_round_trip_builds_same_problem() {
        let spec: ProblemSpec =
            serde_json::from_str(r#"{"family":"resource-allocation"}"#).unwrap();
        let prob = spec.build(&GraphSpec::Line { num_vertices: 13 }).unwrap();
        let x0 = resource_initial_x();
        assert_eq!(
            prob.eval_aggregate(&x0).unwrap(),
            build_resource_allocation().eval_aggregate(&x0).unwrap()
        );
    }
}
