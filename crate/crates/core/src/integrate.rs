//! Fixed-step integration of the (nonsmooth) vector fields.
//!
//! After every step the inequality multipliers are clamped to `[0, inf)`;
//! the x-block is never re-projected, so any feasibility drift is visible in
//! the recorded diagnostics.

use serde::{Deserialize, Serialize};

use crate::dynamics::{Algorithm, FieldEval, NetworkState, VectorField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    #[default]
    ExplicitEuler,
    Rk4WithProjection,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorConfig {
    #[serde(default)]
    pub scheme: Scheme,
    pub dt: f64,
    pub horizon: f64,
    #[serde(default = "one")]
    pub record_every: usize,
}

fn one() -> usize {
    1
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        IntegratorConfig {
            scheme: Scheme::ExplicitEuler,
            dt: 1e-3,
            horizon: 50.0,
            record_every: 1,
        }
    }
}

impl IntegratorConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.dt.is_finite() || self.dt <= 0.0 {
            return Err(Error::Parameter(format!("dt must be > 0, got {}", self.dt)));
        }
        if !self.horizon.is_finite() || self.horizon <= self.dt {
            return Err(Error::Parameter(format!(
                "horizon must exceed dt, got horizon {} and dt {}",
                self.horizon, self.dt
            )));
        }
        if self.record_every == 0 {
            return Err(Error::Parameter("record_every must be >= 1".into()));
        }
        Ok(())
    }

    /// Number of steps, `round(horizon / dt)`.
    pub fn num_steps(&self) -> usize {
        (self.horizon / self.dt).round() as usize
    }
}

/// Quantities recorded alongside a state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Aggregate inequality values `g(decision)`.
    pub g: Vec<f64>,
    /// Aggregate equality values `h(decision)`.
    pub h: Vec<f64>,
    /// Norm of the decision-variable velocity (`|S_alpha|` for `sp-sgf`).
    pub snorm: f64,
    /// `f(decision)`
    pub objective: f64,
    /// `grad f(decision) . d(decision)/dt`
    pub descent_lhs: f64,
    /// Right-hand side of the perturbed descent inequality, when defined.
    pub descent_bound: Option<f64>,
    /// Active rows of each subproblem (`Ineq` indices; equalities are always active).
    pub active_sets: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub step: usize,
    pub time: f64,
    pub state: NetworkState,
    pub diagnostics: StepDiagnostics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum Termination {
    Completed,
    /// The field could not be evaluated (e.g. an infeasible local subproblem).
    FieldError {
        step: usize,
        time: f64,
        error: String,
    },
    /// A step produced a NaN or infinite entry.
    NonFinite {
        step: usize,
        time: f64,
    },
}

impl Termination {
    pub fn is_completed(&self) -> bool {
        matches!(self, Termination::Completed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub algorithm: Algorithm,
    pub dt: f64,
    pub records: Vec<Record>,
    pub termination: Termination,
    /// Last state that was evaluated successfully (recorded or not).
    pub last_valid: NetworkState,
}

impl Trajectory {
    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        self.records.iter().map(|r| r.time)
    }

    pub fn final_record(&self) -> Option<&Record> {
        self.records.last()
    }

    /// Decision variable of every recorded state.
    pub fn decisions(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.records
            .iter()
            .map(|r| self.algorithm.decision(&r.state))
    }
}

fn diagnostics<F: VectorField + ?Sized>(
    field: &F,
    state: &NetworkState,
    eval: &FieldEval,
) -> Result<StepDiagnostics> {
    let problem = field.problem();
    let decision = field.decision(state);
    let velocity = field.decision(&eval.derivative);
    let agg = problem.eval_aggregate(decision)?;
    let grad = problem.objective_gradient(decision);
    Ok(StepDiagnostics {
        g: agg.g,
        h: agg.h,
        snorm: velocity.iter().map(|v| v * v).sum::<f64>().sqrt(),
        objective: agg.objective,
        descent_lhs: grad.iter().zip(velocity).map(|(a, b)| a * b).sum(),
        descent_bound: eval.descent_bound,
        active_sets: eval.qp.iter().map(|s| s.active_set.clone()).collect(),
    })
}

fn clamped(mut s: NetworkState) -> NetworkState {
    s.clamp_multipliers();
    s
}

/// One step from `state`, whose field value `k1` is already known.
fn advance<F: VectorField + ?Sized>(
    field: &F,
    scheme: Scheme,
    dt: f64,
    state: &NetworkState,
    k1: &NetworkState,
) -> Result<NetworkState> {
    match scheme {
        Scheme::ExplicitEuler => Ok(clamped(state.add_scaled(dt, k1))),
        Scheme::Rk4WithProjection => {
            let k2 = field
                .evaluate(&clamped(state.add_scaled(0.5 * dt, k1)))?
                .derivative;
            let k3 = field
                .evaluate(&clamped(state.add_scaled(0.5 * dt, &k2)))?
                .derivative;
            let k4 = field
                .evaluate(&clamped(state.add_scaled(dt, &k3)))?
                .derivative;
            let mut incr = k1.add_scaled(2.0, &k2).add_scaled(2.0, &k3);
            incr = incr.add_scaled(1.0, &k4);
            Ok(clamped(state.add_scaled(dt / 6.0, &incr)))
        }
    }
}

/// Summary returned by [`integrate_with`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub termination: Termination,
    pub last_valid: NetworkState,
    pub steps_taken: usize,
}

/// Integrates and hands every recorded step to `observer` instead of storing it.
///
/// Steps `0, record_every, 2*record_every, ...` and the final step are recorded.
pub fn integrate_with<F, O>(
    field: &F,
    initial: &NetworkState,
    cfg: &IntegratorConfig,
    mut observer: O,
) -> Result<RunSummary>
where
    F: VectorField + ?Sized,
    O: FnMut(Record),
{
    cfg.validate()?;
    initial.check_dims(field.algorithm(), field.problem())?;
    if initial.lambda.iter().any(|l| *l < 0.0) {
        return Err(Error::Parameter(
            "initial inequality multipliers must be >= 0".into(),
        ));
    }
    let steps = cfg.num_steps();
    let mut state = initial.clone();
    for k in 0..=steps {
        let time = k as f64 * cfg.dt;
        let eval = match field.evaluate(&state) {
            Ok(e) => e,
            Err(e) => {
                return Ok(RunSummary {
                    termination: Termination::FieldError {
                        step: k,
                        time,
                        error: e.to_string(),
                    },
                    last_valid: state,
                    steps_taken: k,
                })
            }
        };
        if k % cfg.record_every == 0 || k == steps {
            observer(Record {
                step: k,
                time,
                state: state.clone(),
                diagnostics: diagnostics(field, &state, &eval)?,
            });
        }
        if k == steps {
            break;
        }
        let next = match advance(field, cfg.scheme, cfg.dt, &state, &eval.derivative) {
            Ok(s) => s,
            Err(e) => {
                return Ok(RunSummary {
                    termination: Termination::FieldError {
                        step: k,
                        time,
                        error: e.to_string(),
                    },
                    last_valid: state,
                    steps_taken: k,
                })
            }
        };
        if !next.is_finite() {
            return Ok(RunSummary {
                termination: Termination::NonFinite {
                    step: k + 1,
                    time: (k + 1) as f64 * cfg.dt,
                },
                last_valid: state,
                steps_taken: k,
            });
        }
        state = next;
    }
    Ok(RunSummary {
        termination: Termination::Completed,
        last_valid: state,
        steps_taken: steps,
    })
}

/// Integrates and keeps every recorded step.
pub fn integrate<F: VectorField + ?Sized>(
    field: &F,
    initial: &NetworkState,
    cfg: &IntegratorConfig,
) -> Result<Trajectory> {
    let mut records = Vec::with_capacity(cfg.num_steps() / cfg.record_every.max(1) + 2);
    let summary = integrate_with(field, initial, cfg, |r| records.push(r))?;
    Ok(Trajectory {
        algorithm: field.algorithm(),
        dt: cfg.dt,
        records,
        termination: summary.termination,
        last_valid: summary.last_valid,
    })
}

/// Final decision variable of a run that must complete.
fn endpoint<F: VectorField + ?Sized>(
    field: &F,
    initial: &NetworkState,
    scheme: Scheme,
    dt: f64,
    horizon: f64,
) -> Result<Vec<f64>> {
    let cfg = IntegratorConfig {
        scheme,
        dt,
        horizon,
        record_every: usize::MAX,
    };
    let summary = integrate_with(field, initial, &cfg, |_| {})?;
    match summary.termination {
        Termination::Completed => Ok(field.decision(&summary.last_valid).to_vec()),
        other => Err(Error::Parameter(format!(
            "step-halving run did not complete: {other:?}"
        ))),
    }
}

/// Observed convergence order from a step-halving study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum OrderEstimate {
    /// `error_dt = |x_dt - x_{dt/2}|`, `error_half = |x_{dt/2} - x_{dt/4}|`.
    Order {
        value: f64,
        error_dt: f64,
        error_half: f64,
    },
    /// Both runs already agree with the reference to rounding.
    Exact,
}

/// Richardson estimate `log2(|x_dt - x_{dt/2}| / |x_{dt/2} - x_{dt/4}|)` at time `T`.
///
/// Differences of successive halvings cancel the leading error constant, so the
/// estimate equals the order `p` (measuring against the `dt/4` run instead
/// would give `log2(2^p + 1)`).
pub fn step_halving_check<F: VectorField + ?Sized>(
    field: &F,
    initial: &NetworkState,
    scheme: Scheme,
    dt: f64,
    horizon: f64,
) -> Result<OrderEstimate> {
    let coarse = endpoint(field, initial, scheme, dt, horizon)?;
    let half = endpoint(field, initial, scheme, dt / 2.0, horizon)?;
    let reference = endpoint(field, initial, scheme, dt / 4.0, horizon)?;
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let (e1, e2) = (dist(&coarse, &half), dist(&half, &reference));
    let scale = reference.iter().map(|v| v.abs()).fold(1.0, f64::max);
    if e1 <= 1e-14 * scale && e2 <= 1e-14 * scale {
        return Ok(OrderEstimate::Exact);
    }
    Ok(OrderEstimate::Order {
        value: (e1 / e2).log2(),
        error_dt: e1,
        error_half: e2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{Algorithm, AlgorithmParams, CentralizedSgfField, SpSgfField};
    use crate::function::ScalarFunction;
    use crate::graph::Graph;
    use crate::problem::{build_resource_allocation, resource_initial_x, SeparableProblem};
    use std::sync::Arc;

    fn decoupled(objective: ScalarFunction) -> SeparableProblem {
        SeparableProblem::new(
            Arc::new(Graph::line(2).unwrap()),
            1,
            vec![objective.clone(), objective],
            vec![vec![]; 2],
            vec![vec![]; 2],
        )
        .unwrap()
    }

    #[test]
    fn zero_field_gives_constant_trajectory() {
        let prob = decoupled(ScalarFunction::Zero);
        let field = CentralizedSgfField {
            problem: &prob,
            alpha: 1.0,
        };
        let s0 = NetworkState::initial(Algorithm::CentralizedSgf, &prob, &[1.5, -2.0]).unwrap();
        let cfg = IntegratorConfig {
            horizon: 0.1,
            ..Default::default()
        };
        let traj = integrate(&field, &s0, &cfg).unwrap();
        assert_eq!(traj.records.len(), 101);
        assert!(traj.records.iter().all(|r| r.state == s0));
        assert_eq!(
            step_halving_check(&field, &s0, Scheme::ExplicitEuler, 1e-2, 0.5).unwrap(),
            OrderEstimate::Exact
        );
    }

    #[test]
    fn exponential_decay() {
        let prob = decoupled(ScalarFunction::half_squared_distance(&[0.0]));
        let field = CentralizedSgfField {
            problem: &prob,
            alpha: 1.0,
        };
        let s0 = NetworkState::initial(Algorithm::CentralizedSgf, &prob, &[1.0, -3.0]).unwrap();
        let cfg = IntegratorConfig {
            horizon: 1.0,
            ..Default::default()
        };
        let traj = integrate(&field, &s0, &cfg).unwrap();
        let last = traj.final_record().unwrap();
        assert!((last.time - 1.0).abs() < 1e-12);
        for (x, x0) in last.state.x.iter().zip([1.0, -3.0]) {
            let exact = x0 * (-1.0f64).exp();
            assert!(((x - exact) / exact).abs() < 1e-3);
        }
        // Times are k * dt exactly.
        for (k, r) in traj.records.iter().enumerate() {
            assert_eq!(r.time, k as f64 * 1e-3);
        }
    }

    #[test]
    fn orders_on_smooth_field() {
        let prob = decoupled(ScalarFunction::half_squared_distance(&[0.5]));
        let field = CentralizedSgfField {
            problem: &prob,
            alpha: 1.0,
        };
        let s0 = NetworkState::initial(Algorithm::CentralizedSgf, &prob, &[2.0, -1.0]).unwrap();
        let OrderEstimate::Order { value: euler, .. } =
            step_halving_check(&field, &s0, Scheme::ExplicitEuler, 1e-2, 1.0).unwrap()
        else {
            panic!("expected an order estimate")
        };
        assert!((euler - 1.0).abs() < 0.1, "euler order {euler}");
        let OrderEstimate::Order { value: rk4, .. } =
            step_halving_check(&field, &s0, Scheme::Rk4WithProjection, 5e-2, 1.0).unwrap()
        else {
            panic!("expected an order estimate")
        };
        assert!(rk4 >= 2.0, "rk4 order {rk4}");
    }

    #[test]
    fn record_every_subsamples_and_keeps_final() {
        let prob = build_resource_allocation();
        let field = SpSgfField::new(&prob, AlgorithmParams::default());
        let s0 = NetworkState::initial(Algorithm::SpSgf, &prob, &resource_initial_x()).unwrap();
        let cfg = IntegratorConfig {
            dt: 1e-2,
            horizon: 0.25,
            record_every: 10,
            ..Default::default()
        };
        let traj = integrate(&field, &s0, &cfg).unwrap();
        let steps: Vec<usize> = traj.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, vec![0, 10, 20, 25]);
        assert!(traj.termination.is_completed());
        assert_eq!(traj.records[0].diagnostics.active_sets.len(), 13);
    }

    #[test]
    fn invalid_configs_rejected() {
        for cfg in [
            IntegratorConfig {
                dt: 0.0,
                ..Default::default()
            },
            IntegratorConfig {
                dt: 1.0,
                horizon: 0.5,
                ..Default::default()
            },
            IntegratorConfig {
                record_every: 0,
                ..Default::default()
            },
        ] {
            assert!(cfg.validate().is_err());
        }
    }

    #[test]
    fn nonfinite_state_aborts_with_step() {
        // Exponential blow-up of exp(-x) pushes the SP baseline to infinity fast.
        let prob = build_resource_allocation();
        let field = crate::dynamics::SpField { problem: &prob };
        let mut x0 = resource_initial_x();
        x0[1] = -700.0;
        let s0 = NetworkState::initial(Algorithm::Sp, &prob, &x0).unwrap();
        let traj = integrate(&field, &s0, &IntegratorConfig::default()).unwrap();
        assert!(matches!(traj.termination, Termination::NonFinite { .. }));
        assert!(traj.last_valid.is_finite());
    }
}
