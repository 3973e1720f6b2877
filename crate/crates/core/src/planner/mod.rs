//! Receding-horizon planner with task-oriented obstacle avoidance.
//!
//! All costs and constraints are linearized once at the measurement (frozen end-effector
//! Jacobian, frozen distance gradients) and the prediction model is an explicit-Euler
//! double integrator, so each planning step is a single convex QP.

pub mod banded;
pub mod config;
pub mod cost;
pub mod qp;
pub mod transcribe;

use std::time::{Duration, Instant};

use nalgebra::DVector;

pub use config::{Diag, MpcConfig, Shooting};
pub use cost::{predicted_twist, reference_twist, relaxation_factor, repulsive_cost, repulsive_velocity, stage_cost, terminal_cost, CostContext};
pub use transcribe::{shooting_defects, shift_solution, transcribe, Layout, MpcProblem};

use crate::error::{Error, Result};
use crate::geometry::Primitive;
use crate::model::{Pose, RobotModel};
use qp::{solve_qp, QpSettings};

/// Slack level above which a solve counts as infeasible.
pub const SLACK_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct PlannerInput {
    /// Measured `(q, q̇)`.
    pub x0: DVector<f64>,
    pub t_ref: Pose,
    pub obstacles: Vec<Primitive>,
    pub warm_start: Option<MpcSolution>,
    /// Optional joint-space target pulled towards with `posture_weight`.
    pub posture: Option<DVector<f64>>,
}

#[derive(Clone, Debug)]
pub struct MpcSolution {
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    pub cost: f64,
    pub max_defect: f64,
    /// Smallest linearized distance over all distance rows (∞ without rows).
    pub min_predicted_distance: f64,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub max_slack: f64,
    pub working_set: usize,
    pub lambda: f64,
    /// Wall-clock solve time; never written to deterministic logs.
    pub solve_seconds: f64,
}

impl MpcSolution {
    pub fn infeasible(&self) -> bool {
        self.max_slack > SLACK_TOL
    }
}

/// Solves a transcribed problem with the configured shooting method.
pub fn solve(problem: &MpcProblem, cfg: &MpcConfig) -> Result<MpcSolution> {
    let t0 = Instant::now();
    let settings = QpSettings {
        max_iters: cfg.max_iters,
        kkt_tol: cfg.kkt_tol,
        deadline: (cfg.deadline_ms > 0.0).then(|| t0 + Duration::from_secs_f64(cfg.deadline_ms * 1e-3)),
    };
    let start = transcribe::feasible_start(problem);
    let l = problem.layout;
    let (z, qp) = match cfg.shooting {
        Shooting::Multiple => {
            let s = solve_qp(&problem.qp, &start, &settings)?;
            (s.z.clone(), s)
        }
        Shooting::Single => {
            let c = transcribe::condense(problem);
            let w0 = start.rows(l.num_state_vars(), l.num_input_vars() + l.num_slack_vars()).into_owned();
            let s = solve_qp(&c.qp, &w0, &settings)?;
            (&c.z0 + &c.gamma * &s.z, s)
        }
    };
    let (states, inputs, slacks) = problem.unpack(&z);
    let max_defect =
        shooting_defects(&states, &inputs, problem.dt)?.iter().map(|g| g.amax()).fold(0.0, f64::max);
    let n = l.dof;
    let min_predicted_distance = problem
        .distance_rows
        .iter()
        .map(|r| r.pair.distance + r.gradient.dot(&(states[r.node].rows(0, n) - problem.x0.rows(0, n))))
        .fold(f64::INFINITY, f64::min);
    let max_slack = slacks.iter().cloned().fold(0.0, f64::max);
    let converged = qp.converged && max_defect <= cfg.defect_tol && max_slack <= SLACK_TOL;
    Ok(MpcSolution {
        states,
        inputs,
        cost: problem.qp.objective(&z),
        max_defect,
        min_predicted_distance,
        iterations: qp.iterations,
        converged,
        kkt_residual: qp.kkt_residual,
        max_slack,
        working_set: qp.active.len(),
        lambda: problem.context.lambda,
        solve_seconds: t0.elapsed().as_secs_f64(),
    })
}

/// Output of one planning step.
#[derive(Clone, Debug)]
pub struct PlanStep {
    /// First node of the plan in use (the measurement, or the shifted previous plan).
    pub x_start: DVector<f64>,
    /// Desired state `x₁`.
    pub x_next: DVector<f64>,
    pub plan: MpcSolution,
    pub fallback: bool,
}

impl PlanStep {
    pub fn q_des(&self) -> DVector<f64> {
        let n = self.x_next.len() / 2;
        self.x_next.rows(0, n).into_owned()
    }

    pub fn qd_des(&self) -> DVector<f64> {
        let n = self.x_next.len() / 2;
        self.x_next.rows(n, n).into_owned()
    }
}

/// Stateful planner: keeps the last plan for warm starts and fallbacks.
#[derive(Clone, Debug)]
pub struct Planner {
    pub cfg: MpcConfig,
    previous: Option<MpcSolution>,
    consecutive_fallbacks: usize,
}

impl Planner {
    pub fn new(cfg: MpcConfig) -> Self {
        Self { cfg, previous: None, consecutive_fallbacks: 0 }
    }

    pub fn previous(&self) -> Option<&MpcSolution> {
        self.previous.as_ref()
    }

    pub fn reset(&mut self) {
        self.previous = None;
        self.consecutive_fallbacks = 0;
    }

    /// Plans from the measurement and returns `x₁`. On solver failure or an infeasible
    /// solve, the previous plan shifted by one node is used instead.
    pub fn plan_step(&mut self, model: &RobotModel, input: &PlannerInput) -> Result<PlanStep> {
        let mut input = input.clone();
        if input.warm_start.is_none() {
            input.warm_start = self.previous.clone();
        }
        let attempt = match transcribe(&input, &self.cfg, model).and_then(|p| solve(&p, &self.cfg)) {
            Err(e @ (Error::Config { .. } | Error::Dimension { .. })) => return Err(e),
            other => other,
        };
        let failure = match &attempt {
            Ok(sol) if !sol.infeasible() => None,
            Ok(sol) => Some(format!("constraint slack {:.3e}", sol.max_slack)),
            Err(e) => Some(e.to_string()),
        };
        match failure {
            None => {
                let sol = attempt?;
                self.consecutive_fallbacks = 0;
                self.previous = Some(sol.clone());
                Ok(PlanStep { x_start: sol.states[0].clone(), x_next: sol.states[1].clone(), plan: sol, fallback: false })
            }
            Some(reason) => {
                self.consecutive_fallbacks += 1;
                if self.consecutive_fallbacks > self.cfg.max_fallbacks {
                    return Err(Error::SolverAbort(format!(
                        "{} consecutive fallbacks (last: {reason})",
                        self.consecutive_fallbacks
                    )));
                }
                log::warn!("planner fallback: {reason}");
                let plan = match (self.previous.take(), attempt) {
                    (Some(prev), _) => {
                        let (states, inputs) = shift_solution(&prev.states, &prev.inputs);
                        MpcSolution { states, inputs, converged: false, ..prev }
                    }
                    (None, Ok(sol)) => sol,
                    (None, Err(e)) => return Err(e),
                };
                self.previous = Some(plan.clone());
                Ok(PlanStep { x_start: plan.states[0].clone(), x_next: plan.states[1].clone(), plan, fallback: true })
            }
        }
    }
}
