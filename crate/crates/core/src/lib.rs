//! Anytime-feasible distributed optimization over networks.
//!
//! A network of agents jointly minimizes a separable convex objective subject
//! to coupled convex inequality and affine equality constraints. The main
//! algorithm cascades a fast projected saddle-point flow, which estimates the
//! constraint-mismatch variables, into per-agent safe gradient flows on the
//! decision variable. Baselines, integrators and verification tools are
//! included.

pub mod dynamics;
pub mod error;
pub mod function;
pub mod graph;
pub mod integrate;
pub mod localqp;
pub mod problem;
pub mod verify;

pub use dynamics::{
    centralized_sgf_field, positive_projection, sp_field, spcm_field, spsgf_field, Algorithm,
    AlgorithmParams, FieldEval, NetworkState, VectorField,
};
pub use error::{Error, Result};
pub use function::ScalarFunction;
pub use graph::{Graph, GraphSpec};
pub use integrate::{integrate, IntegratorConfig, Record, Scheme, Termination, Trajectory};
pub use localqp::{solve_local_qp, LocalQp, QpError, QpSolution};
pub use problem::{
    build_resource_allocation, Dims, ProblemSpec, RegularizedProblem, SeparableProblem,
};
