use thiserror::Error;

use crate::localqp::QpError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid graph: {0}")]
    Graph(String),
    #[error("vertex {vertex} out of range for graph with {num_vertices} vertices")]
    VertexOutOfRange { vertex: usize, num_vertices: usize },
    #[error("right-hand side is not in the Laplacian range (entries sum to {sum:e})")]
    Incompatible { sum: f64 },
    #[error("point is not feasible: {0}")]
    Infeasible(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("agent {agent}: {source}")]
    LocalQp {
        agent: usize,
        #[source]
        source: QpError,
    },
    #[error("centralized flow: {0}")]
    CentralizedQp(#[source] QpError),
    #[error("oracle did not converge after {iterations} iterations (residual {residual:e})")]
    OracleDiverged {
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },
}
