//! Undirected communication graphs, their Laplacians, and the lift that turns
//! a feasible point of the coupled problem into a feasible point of the
//! constraint-mismatch reformulation.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::problem::SeparableProblem;

/// Tolerance on `sum(rhs)` accepted by [`Graph::solve_laplacian`].
pub const RANGE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    num_vertices: usize,
    edges: Vec<(usize, usize)>,
    adjacency: Vec<Vec<usize>>,
}

/// Declarative graph description used by config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum GraphSpec {
    Line {
        num_vertices: usize,
    },
    Cycle {
        num_vertices: usize,
    },
    Complete {
        num_vertices: usize,
    },
    Star {
        num_vertices: usize,
    },
    Edges {
        num_vertices: usize,
        edges: Vec<(usize, usize)>,
    },
}

impl GraphSpec {
    pub fn build(&self) -> Result<Graph> {
        match *self {
            GraphSpec::Line { num_vertices } => Graph::line(num_vertices),
            GraphSpec::Cycle { num_vertices } => Graph::cycle(num_vertices),
            GraphSpec::Complete { num_vertices } => Graph::complete(num_vertices),
            GraphSpec::Star { num_vertices } => Graph::star(num_vertices),
            GraphSpec::Edges {
                num_vertices,
                ref edges,
            } => Graph::from_edges(num_vertices, edges.iter().copied()),
        }
    }

    pub fn num_vertices(&self) -> usize {
        match *self {
            GraphSpec::Line { num_vertices }
            | GraphSpec::Cycle { num_vertices }
            | GraphSpec::Complete { num_vertices }
            | GraphSpec::Star { num_vertices }
            | GraphSpec::Edges { num_vertices, .. } => num_vertices,
        }
    }
}

impl Graph {
    /// Builds a graph from unordered vertex pairs. Duplicate edges collapse;
    /// self-loops and out-of-range endpoints are rejected.
    pub fn from_edges(
        num_vertices: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self> {
        if num_vertices == 0 {
            return Err(Error::Graph("graph must have at least one vertex".into()));
        }
        let mut normalized = Vec::new();
        for (a, b) in edges {
            for v in [a, b] {
                if v >= num_vertices {
                    return Err(Error::VertexOutOfRange {
                        vertex: v,
                        num_vertices,
                    });
                }
            }
            if a == b {
                return Err(Error::Graph(format!("self-loop at vertex {a}")));
            }
            normalized.push((a.min(b), a.max(b)));
        }
        normalized.sort_unstable();
        normalized.dedup();
        let mut adjacency = vec![Vec::new(); num_vertices];
        for &(a, b) in &normalized {
            adjacency[a].push(b);
            adjacency[b].push(a);
        }
        for nbrs in &mut adjacency {
            nbrs.sort_unstable();
        }
        Ok(Graph {
            num_vertices,
            edges: normalized,
            adjacency,
        })
    }

    pub fn line(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|i| (i - 1, i)))
    }

    pub fn cycle(n: usize) -> Result<Self> {
        if n < 3 {
            return Err(Error::Graph(format!(
                "cycle needs at least 3 vertices, got {n}"
            )));
        }
        Self::from_edges(n, (0..n).map(|i| (i, (i + 1) % n)))
    }

    pub fn complete(n: usize) -> Result<Self> {
        Self::from_edges(n, (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))))
    }

    /// Star centered at vertex 0.
    pub fn star(n: usize) -> Result<Self> {
        Self::from_edges(n, (1..n).map(|i| (0, i)))
    }

    pub fn num_vertices(&self) -> usize {
        self.num_vertices
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn neighbors(&self, i: usize) -> Result<&[usize]> {
        self.adjacency
            .get(i)
            .map(Vec::as_slice)
            .ok_or(Error::VertexOutOfRange {
                vertex: i,
                num_vertices: self.num_vertices,
            })
    }

    /// Neighbor list without the range check, for hot loops over `0..N`.
    pub(crate) fn nbrs(&self, i: usize) -> &[usize] {
        &self.adjacency[i]
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    pub fn is_connected(&self) -> bool {
        let mut seen = vec![false; self.num_vertices];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &self.adjacency[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        seen.into_iter().all(|s| s)
    }

    /// `L = D - A`
    pub fn laplacian(&self) -> DMatrix<f64> {
        let n = self.num_vertices;
        let mut l = DMatrix::zeros(n, n);
        for &(a, b) in &self.edges {
            l[(a, b)] -= 1.0;
            l[(b, a)] -= 1.0;
            l[(a, a)] += 1.0;
            l[(b, b)] += 1.0;
        }
        l
    }

    /// `(L w)_i = sum_{j in N_i} (w_i - w_j)`, evaluated neighbor-locally.
    pub fn apply_laplacian(&self, w: &[f64]) -> Vec<f64> {
        (0..self.num_vertices)
            .map(|i| self.mismatch(w, i))
            .collect()
    }

    /// `sum_{j in N_i} (w_i - w_j)` for a single vertex.
    pub fn mismatch(&self, w: &[f64], i: usize) -> f64 {
        self.adjacency[i].iter().map(|&j| w[i] - w[j]).sum()
    }

    /// Minimum-norm solution of `L w = rhs`.
    ///
    /// `rhs` must lie in the range of `L`, i.e. sum to zero (within
    /// [`RANGE_TOL`]); the graph must be connected. The returned vector is
    /// orthogonal to the all-ones vector.
    pub fn solve_laplacian(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        let n = self.num_vertices;
        if rhs.len() != n {
            return Err(Error::Dimension(format!(
                "rhs has length {}, graph has {n} vertices",
                rhs.len()
            )));
        }
        if !self.is_connected() {
            return Err(Error::Graph(
                "Laplacian solve needs a connected graph".into(),
            ));
        }
        let sum: f64 = rhs.iter().sum();
        if sum.abs() > RANGE_TOL {
            return Err(Error::Incompatible { sum });
        }
        // L + 11'/N is SPD on a connected graph and agrees with L on 1-perp.
        let shifted = self.laplacian().add_scalar(1.0 / n as f64);
        let chol = shifted
            .cholesky()
            .ok_or_else(|| Error::Graph("shifted Laplacian not positive definite".into()))?;
        let mut w = chol.solve(&DVector::from_column_slice(rhs));
        let mean = w.mean();
        w.add_scalar_mut(-mean);
        Ok(w.as_slice().to_vec())
    }
}

/// Mismatch variables that make `x` feasible for the reformulated problem.
#[derive(Debug, Clone, PartialEq)]
pub struct LiftedPoint {
    /// `N*p`, agent-major.
    pub y: Vec<f64>,
    /// `N*q`, agent-major.
    pub z: Vec<f64>,
}

/// Lifts a feasible `x` of the coupled problem to `(y, z)` such that
/// `g_i^k(x_i) + (L y^k)_i <= 0` and `h_i^l(x_i) + (L z^l)_i = 0` for every agent.
///
/// Inequality slack `-g^k(x)` is split equally across agents before solving
/// `L y^k = -(v^k + s^k)` in the minimum-norm sense.
pub fn lift_feasible_point(problem: &SeparableProblem, x: &[f64]) -> Result<LiftedPoint> {
    let dims = problem.dims();
    if x.len() != dims.num_agents * dims.agent_dim {
        return Err(Error::Dimension(format!(
            "x has length {}, expected {}",
            x.len(),
            dims.num_agents * dims.agent_dim
        )));
    }
    if !problem.is_feasible(x, RANGE_TOL)? {
        return Err(Error::Infeasible(
            "lift requires a feasible point (tol 1e-9)".into(),
        ));
    }
    let n_agents = dims.num_agents;
    let graph = problem.graph();
    let mut y = vec![0.0; n_agents * dims.num_ineq];
    let mut z = vec![0.0; n_agents * dims.num_eq];

    for k in 0..dims.num_ineq {
        let summands: Vec<f64> = (0..n_agents)
            .map(|i| problem.ineq(i, k).value(problem.agent_block(x, i)))
            .collect();
        let slack = -summands.iter().sum::<f64>() / n_agents as f64;
        let rhs: Vec<f64> = summands.iter().map(|v| -(v + slack)).collect();
        let yk = graph.solve_laplacian(&rhs)?;
        for i in 0..n_agents {
            y[i * dims.num_ineq + k] = yk[i];
        }
    }
    for l in 0..dims.num_eq {
        let mut rhs: Vec<f64> = (0..n_agents)
            .map(|i| -problem.eq(i, l).value(problem.agent_block(x, i)))
            .collect();
        // Remove the (<= tol) aggregate residual so the system is exactly compatible.
        let mean = rhs.iter().sum::<f64>() / n_agents as f64;
        rhs.iter_mut().for_each(|r| *r -= mean);
        let zl = graph.solve_laplacian(&rhs)?;
        for i in 0..n_agents {
            z[i * dims.num_eq + l] = zl[i];
        }
    }
    Ok(LiftedPoint { y, z })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn neighbors_of_standard_families() {
        let line = Graph::line(13).unwrap();
        assert_eq!(line.neighbors(1).unwrap(), &[0, 2]);
        assert_eq!(line.neighbors(0).unwrap(), &[1]);
        assert_eq!(line.neighbors(12).unwrap(), &[11]);
        let k3 = Graph::complete(3).unwrap();
        assert_eq!(k3.neighbors(1).unwrap(), &[0, 2]);
        assert!(matches!(
            line.neighbors(13),
            Err(Error::VertexOutOfRange { vertex: 13, .. })
        ));
    }

    #[test]
    fn laplacian_examples() {
        let l3 = Graph::line(3).unwrap().laplacian();
        let expected =
            DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(l3, expected);
        let k2 = Graph::complete(2).unwrap().laplacian();
        assert_eq!(k2, DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn line13_spectrum() {
        let mut eig: Vec<f64> = Graph::line(13)
            .unwrap()
            .laplacian()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .collect();
        eig.sort_by(f64::total_cmp);
        assert!(eig[0].abs() < 1e-12);
        // 2 - 2 cos(pi / 13)
        let fiedler = 2.0 - 2.0 * (std::f64::consts::PI / 13.0).cos();
        assert!((eig[1] - fiedler).abs() < 1e-10);
    }

    #[test]
    fn disconnected_graph_detected() {
        let g = Graph::from_edges(4, [(0, 1), (2, 3)]).unwrap();
        assert!(!g.is_connected());
        assert!(g.solve_laplacian(&[0.0; 4]).is_err());
        assert!(Graph::from_edges(3, [(1, 1)]).is_err());
    }

    #[test]
    fn solve_laplacian_examples() {
        let k2 = Graph::complete(2).unwrap();
        assert_eq!(k2.solve_laplacian(&[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        let w = k2.solve_laplacian(&[1.0, -1.0]).unwrap();
        assert!((w[0] - 0.5).abs() < 1e-15 && (w[1] + 0.5).abs() < 1e-15);
        assert!(matches!(
            k2.solve_laplacian(&[1.0, 0.0]),
            Err(Error::Incompatible { .. })
        ));
    }

    fn arb_graph() -> impl Strategy<Value = Graph> {
        (2usize..12, 0u8..4).prop_map(|(n, fam)| match fam {
            0 => Graph::line(n).unwrap(),
            1 if n >= 3 => Graph::cycle(n).unwrap(),
            2 => Graph::complete(n).unwrap(),
            _ => Graph::star(n).unwrap(),
        })
    }

    proptest! {
        #[test]
        fn laplacian_rows_sum_to_zero_and_mismatch_telescopes(
            g in arb_graph(),
            vals in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let n = g.num_vertices();
            let l = g.laplacian();
            for r in 0..n {
                prop_assert_eq!(l.row(r).sum(), 0.0);
                prop_assert_eq!(g.neighbors(r).unwrap().len(), g.degree(r));
            }
            // Every edge appears with opposite signs, so the total mismatch is exactly zero
            // when summed edge-by-edge.
            let w = &vals[..n];
            let mut total = 0.0;
            for &(a, b) in g.edges() {
                total += (w[a] - w[b]) + (w[b] - w[a]);
            }
            prop_assert_eq!(total, 0.0);
            let lw = g.apply_laplacian(w);
            prop_assert!(lw.iter().sum::<f64>().abs() < 1e-12);
        }

        #[test]
        fn solve_round_trip_and_orthogonality(
            g in arb_graph(),
            vals in proptest::collection::vec(-10.0f64..10.0, 12),
        ) {
            let n = g.num_vertices();
            let mean = vals[..n].iter().sum::<f64>() / n as f64;
            let rhs: Vec<f64> = vals[..n].iter().map(|v| v - mean).collect();
            let w = g.solve_laplacian(&rhs).unwrap();
            prop_assert!(w.iter().sum::<f64>().abs() < 1e-10);
            let back = g.apply_laplacian(&w);
            for (b, r) in back.iter().zip(&rhs) {
                prop_assert!((b - r).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn symmetric_adjacency() {
        let g = Graph::from_edges(5, [(0, 1), (1, 2), (3, 1), (4, 3), (1, 0)]).unwrap();
        assert_eq!(g.edges().len(), 4);
        for i in 0..5 {
            for &j in g.neighbors(i).unwrap() {
                assert!(g.neighbors(j).unwrap().contains(&i));
            }
        }
    }
}
