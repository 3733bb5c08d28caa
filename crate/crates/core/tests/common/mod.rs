//! Shared fixtures and independent reference computations for integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use spsgf_core::dynamics::{Algorithm, AlgorithmParams, NetworkState};
use spsgf_core::localqp::LocalQp;
use spsgf_core::problem::{build_resource_allocation, resource_initial_x, SeparableProblem};

pub fn example_problem() -> SeparableProblem {
    build_resource_allocation()
}

pub fn example_params(tau: f64) -> AlgorithmParams {
    AlgorithmParams {
        tau,
        epsilon: 1e-4,
        alpha: 1.0,
    }
}

pub fn example_initial(algorithm: Algorithm, problem: &SeparableProblem) -> NetworkState {
    NetworkState::initial(algorithm, problem, &resource_initial_x()).unwrap()
}

/// Feasible start on the inequality boundary `sum exp(-x_i2) = 3`, with the
/// first two agents pulled apart so the flow moves tangentially.
pub fn boundary_start() -> Vec<f64> {
    let mut x = resource_initial_x();
    let c = (13.0f64 / 3.0).ln();
    for i in 0..13 {
        x[2 * i + 1] = c;
    }
    let a = c - 0.5;
    x[1] = a;
    x[3] = -(6.0 / 13.0 - (-a).exp()).ln();
    x
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// Reference solution of a strictly convex local subproblem.
pub struct Enumerated {
    pub direction: DVector<f64>,
    pub ineq_multipliers: DVector<f64>,
    pub eq_multipliers: DVector<f64>,
}

/// Brute force over all inequality subsets: for each candidate active set with
/// linearly independent rows, solve the full KKT system by LU and keep the
/// lowest-cost point that satisfies every KKT condition. Some optimal active
/// set always has independent rows, so skipping dependent ones loses nothing.
pub fn enumerate_qp(qp: &LocalQp) -> Option<Enumerated> {
    let n = qp.gradient.len();
    let p = qp.ineq_normals.nrows();
    let q = qp.eq_normals.nrows();
    let mut best: Option<(f64, Enumerated)> = None;
    for mask in 0u32..(1 << p) {
        let active: Vec<usize> = (0..p).filter(|k| mask & (1 << k) != 0).collect();
        let m = active.len() + q;
        if m > n {
            continue;
        }
        if m > 0 {
            let rows = DMatrix::from_fn(m, n, |r, d| {
                if r < active.len() {
                    qp.ineq_normals[(active[r], d)]
                } else {
                    qp.eq_normals[(r - active.len(), d)]
                }
            });
            let sv = rows.svd(false, false).singular_values;
            if sv.min() <= 1e-10 * sv.max().max(1.0) {
                continue;
            }
        }
        let mut kkt = DMatrix::zeros(n + m, n + m);
        let mut rhs = DVector::zeros(n + m);
        for d in 0..n {
            kkt[(d, d)] = 1.0;
            rhs[d] = -qp.gradient[d];
        }
        for (r, &k) in active.iter().enumerate() {
            for d in 0..n {
                kkt[(d, n + r)] = qp.ineq_normals[(k, d)];
                kkt[(n + r, d)] = qp.ineq_normals[(k, d)];
            }
            rhs[n + r] = qp.ineq_bounds[k];
        }
        for l in 0..q {
            let r = active.len() + l;
            for d in 0..n {
                kkt[(d, n + r)] = qp.eq_normals[(l, d)];
                kkt[(n + r, d)] = qp.eq_normals[(l, d)];
            }
            rhs[n + r] = qp.eq_bounds[l];
        }
        let lu = kkt.clone().lu();
        if !lu.is_invertible() {
            continue;
        }
        let Some(sol) = lu.solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-10 * (1.0 + rhs.amax()) {
            continue;
        }
        let xi = sol.rows(0, n).into_owned();
        let mut lam = DVector::zeros(p);
        for (r, &k) in active.iter().enumerate() {
            lam[k] = sol[n + r];
        }
        let mu = sol.rows(n + active.len(), q).into_owned();
        let tol = 1e-9 * (1.0 + xi.amax());
        let primal_ok =
            (0..p).all(|k| (qp.ineq_normals.row(k) * &xi)[0] <= qp.ineq_bounds[k] + tol);
        let dual_ok = lam.iter().all(|l| *l >= -tol);
        if primal_ok && dual_ok {
            let value = 0.5 * (&xi + &qp.gradient).norm_squared();
            let cand = Enumerated {
                direction: xi,
                ineq_multipliers: lam,
                eq_multipliers: mu,
            };
            if best.as_ref().is_none_or(|(v, _)| value < *v) {
                best = Some((value, cand));
            }
        }
    }
    best.map(|(_, e)| e)
}

/// Random feasible subproblem: bounds are generated from a known feasible
/// direction, with some inequalities tight at it.
pub fn random_feasible_qp<R: Rng>(rng: &mut R, n: usize, p: usize, q: usize) -> LocalQp {
    let mut mat = |rows: usize| DMatrix::from_fn(rows, n, |_, _| rng.gen_range(-2.0..2.0));
    let ineq_normals = mat(p);
    let eq_normals = mat(q);
    let xi0 = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let ineq_bounds = DVector::from_fn(p, |k, _| {
        let slack = if rng.gen_bool(0.3) {
            0.0
        } else {
            rng.gen_range(0.0..2.0)
        };
        (ineq_normals.row(k) * &xi0)[0] + slack
    });
    let eq_bounds = DVector::from_fn(q, |l, _| (eq_normals.row(l) * &xi0)[0]);
    let gradient = DVector::from_fn(n, |_, _| rng.gen_range(-5.0..5.0));
    LocalQp::new(gradient, ineq_normals, ineq_bounds, eq_normals, eq_bounds).unwrap()
}
