//! Deterministic closed-loop simulation: RK4 plant at the control rate, planner at a
//! fixed divisor of it, scripted obstacle motion and contact pushes, CSV logs.

pub mod report;
pub mod scenario;

pub use report::{compare_runs, percentile, Detection, ModeChange, RunComparison, RunReport, SolverStats, WaypointError};
pub use scenario::{apply_overrides, load_scenario, load_scenario_with, parse_scenario, ContactEvent, Obstacle, Scenario};

use std::collections::VecDeque;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::controller::{ControllerState, JointReference, Mode, TickInput, TickOutput};
use crate::error::{Error, Result};
use crate::geometry::closest_pair_per_link;
use crate::model::{forward_kinematics, point_jacobian, pose::so3_log, rk4_step, Pose};
use crate::planner::{PlanStep, Planner, PlannerInput};

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Directory for `log.csv`, `distances.csv`, `ee.csv`, `planner.csv` and `report.txt`.
    pub output_dir: Option<PathBuf>,
    /// Keep every tick in [`RunResult::trace`].
    pub keep_trace: bool,
}

/// One control tick as seen by the logs.
#[derive(Clone, Debug)]
pub struct TickRecord {
    pub time: f64,
    pub task_time: f64,
    pub mode: Mode,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub tau: DVector<f64>,
    pub r_hat: DVector<f64>,
    pub contact_link: Option<usize>,
    pub f_des: f64,
    /// Per-link minimum distance to the true obstacles (infinite without obstacles).
    pub link_distances: Vec<f64>,
    pub ee_position: Vector3<f64>,
    pub ref_position: Vector3<f64>,
    pub ee_position_error: f64,
    pub ee_rotation_error: f64,
}

impl TickRecord {
    pub fn min_distance(&self) -> f64 {
        self.link_distances.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Norm of the stacked rotation (rad) and position (m) error.
    pub fn ee_error(&self) -> f64 {
        self.ee_position_error.hypot(self.ee_rotation_error)
    }
}

#[derive(Clone, Debug)]
pub struct PlanRecord {
    pub time: f64,
    pub mode: Mode,
    pub iterations: usize,
    pub converged: bool,
    pub fallback: bool,
    pub cost: f64,
    pub max_defect: f64,
    pub max_slack: f64,
    pub min_predicted_distance: f64,
    pub lambda: f64,
    pub solve_seconds: f64,
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub report: RunReport,
    pub trace: Vec<TickRecord>,
    pub plans: Vec<PlanRecord>,
}

/// Plan waiting to reach the controller, or the one in use.
struct Handoff {
    active_from: usize,
    planned_at: f64,
    step: PlanStep,
}

impl Handoff {
    /// Linear blend from the plan's first node towards `x₁` over one planner interval.
    fn reference(&self, t: f64, dt: f64) -> JointReference {
        let n = self.step.x_next.len() / 2;
        let s = ((t - self.planned_at) / dt).clamp(0.0, 1.0);
        let a = &self.step.x_start;
        let b = &self.step.x_next;
        let x = a + (b - a) * s;
        JointReference { q: x.rows(0, n).into_owned(), qd: x.rows(n, n).into_owned() }
    }
}

struct Logs {
    dir: PathBuf,
    log: BufWriter<File>,
    distances: BufWriter<File>,
    ee: BufWriter<File>,
    planner: BufWriter<File>,
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path).map(BufWriter::new).map_err(|source| Error::Io { path, source })
}

fn joined(v: &DVector<f64>) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn header(prefix: &str, n: usize) -> String {
    (0..n).map(|i| format!("{prefix}{i}")).collect::<Vec<_>>().join(",")
}

impl Logs {
    fn open(dir: &Path, n: usize, links: usize) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
        let mut logs = Self {
            dir: dir.to_path_buf(),
            log: create(dir, "log.csv")?,
            distances: create(dir, "distances.csv")?,
            ee: create(dir, "ee.csv")?,
            planner: create(dir, "planner.csv")?,
        };
        let cols = [header("q", n), header("qd", n), header("tau", n), header("rhat", n)].join(",");
        logs.write_log(format!("time,mode,{cols},contact_link,min_distance,ee_error"))?;
        let d = format!("time,{}", header("link", links));
        logs.io(|l| writeln!(l.distances, "{d}"))?;
        logs.io(|l| writeln!(l.ee, "time,task_time,x,y,z,ref_x,ref_y,ref_z,position_error,rotation_error"))?;
        logs.io(|l| {
            writeln!(
                l.planner,
                "time,mode,iterations,converged,fallback,cost,max_defect,max_slack,min_predicted_distance,lambda"
            )
        })?;
        Ok(logs)
    }

    fn io(&mut self, f: impl FnOnce(&mut Self) -> std::io::Result<()>) -> Result<()> {
        let dir = self.dir.clone();
        f(self).map_err(|source| Error::Io { path: dir, source })
    }

    fn write_log(&mut self, line: String) -> Result<()> {
        self.io(|l| writeln!(l.log, "{line}"))
    }

    fn tick(&mut self, r: &TickRecord) -> Result<()> {
        let link = r.contact_link.map_or("-1".to_string(), |l| l.to_string());
        let line = format!(
            "{},{},{},{},{},{},{},{},{}",
            r.time,
            r.mode,
            joined(&r.q),
            joined(&r.qd),
            joined(&r.tau),
            joined(&r.r_hat),
            link,
            r.min_distance(),
            r.ee_error()
        );
        self.write_log(line)?;
        let d: Vec<String> = r.link_distances.iter().map(|x| x.to_string()).collect();
        self.io(|l| writeln!(l.distances, "{},{}", r.time, d.join(",")))?;
        self.io(|l| {
            let (p, q) = (r.ee_position, r.ref_position);
            writeln!(
                l.ee,
                "{},{},{},{},{},{},{},{},{},{}",
                r.time, r.task_time, p.x, p.y, p.z, q.x, q.y, q.z, r.ee_position_error, r.ee_rotation_error
            )
        })
    }

    fn plan(&mut self, p: &PlanRecord) -> Result<()> {
        self.io(|l| {
            writeln!(
                l.planner,
                "{},{},{},{},{},{},{},{},{},{}",
                p.time, p.mode, p.iterations, p.converged, p.fallback, p.cost, p.max_defect, p.max_slack, p.min_predicted_distance, p.lambda
            )
        })
    }

    fn finish(&mut self, report: &RunReport) -> Result<()> {
        self.io(|l| {
            l.log.flush()?;
            l.distances.flush()?;
            l.ee.flush()?;
            l.planner.flush()
        })?;
        let path = self.dir.join("report.txt");
        std::fs::write(&path, report.to_text()).map_err(|source| Error::Io { path, source })
    }
}

/// External joint torque of the pushes active at `t`.
pub fn contact_torque(scenario: &Scenario, poses: &[Pose], t: f64) -> Result<DVector<f64>> {
    let n = scenario.model.dof();
    let mut tau = DVector::zeros(n);
    for e in scenario.file.contact_events.iter().filter(|e| e.active(t)) {
        let p = poses[e.link].transform_point(&e.point.into());
        let jp = point_jacobian(&scenario.model, poses, e.link, &p)?;
        tau += jp.transpose() * DVector::from_column_slice(&e.force);
    }
    Ok(tau)
}

/// Runs the scenario to completion. A planner abort flushes the partial logs and is
/// returned as [`Error::SolverAbort`].
pub fn run(scenario: &Scenario, options: &RunOptions) -> Result<RunResult> {
    let model = &scenario.model;
    let n = model.dof();
    let f = &scenario.file;
    let dt = scenario.control_dt();
    let ticks = (f.duration * f.control_rate).round() as usize;
    let divisor = scenario.planner_divisor();
    let obstacle_divisor = ((f.control_rate / f.obstacle_rate).round() as usize).max(1);
    let latency_ticks = (f.planner_latency * f.control_rate).round() as usize;
    let settings = f.controller.resolve(n, dt)?;
    let mut controller = ControllerState::new(settings, n)?;
    let mut planner = Planner::new(f.planner.clone());
    let mut logs = match &options.output_dir {
        Some(dir) => Some(Logs::open(dir, n, n)?),
        None => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(f.seed);
    let noise = (f.measurement_noise > 0.0)
        .then(|| Normal::new(0.0, f.measurement_noise).map_err(|e| Error::config("measurement_noise", e.to_string())))
        .transpose()?;

    let mut report = RunReport::new(scenario, &options.output_dir);
    let mut trace = Vec::new();
    let mut plans = Vec::new();
    let (mut q, mut qd) = (scenario.initial_q.clone(), scenario.initial_qd.clone());
    let mut task_time = 0.0;
    let mut perceived = scenario.obstacles_at(0.0);
    let mut pending: VecDeque<Handoff> = VecDeque::new();
    let mut active: Option<Handoff> = None;
    let mut replan = true;
    let mut planned_mode = Mode::Tracking;

    for i in 0..ticks {
        let t = i as f64 * dt;
        if i % obstacle_divisor == 0 {
            perceived = scenario.obstacles_at(t);
        }
        let q_meas = match &noise {
            Some(dist) => q.map(|v| v + dist.sample(&mut rng)),
            None => q.clone(),
        };
        let mode = controller.mode;
        if f.controllers && mode.tracks_joint_reference() && (i % divisor == 0 || replan) {
            let returning = mode != Mode::Tracking;
            if returning != (planned_mode != Mode::Tracking) {
                planner.reset();
            }
            planned_mode = mode;
            let mut x0 = DVector::zeros(2 * n);
            x0.rows_mut(0, n).copy_from(&q_meas);
            x0.rows_mut(n, n).copy_from(&qd);
            let (t_ref, posture) = if returning {
                (forward_kinematics(model, &controller.q_pre_contact)?[n], Some(controller.q_pre_contact.clone()))
            } else {
                (scenario.reference_at(task_time), None)
            };
            let input = PlannerInput { x0, t_ref, obstacles: perceived.clone(), warm_start: None, posture };
            let step = match planner.plan_step(model, &input) {
                Ok(s) => s,
                Err(e) => {
                    report.aborted = Some(e.to_string());
                    report.finalize(&plans);
                    if let Some(l) = logs.as_mut() {
                        l.finish(&report)?;
                    }
                    return Err(e);
                }
            };
            let record = PlanRecord {
                time: t,
                mode,
                iterations: step.plan.iterations,
                converged: step.plan.converged,
                fallback: step.fallback,
                cost: step.plan.cost,
                max_defect: step.plan.max_defect,
                max_slack: step.plan.max_slack,
                min_predicted_distance: step.plan.min_predicted_distance,
                lambda: step.plan.lambda,
                solve_seconds: step.plan.solve_seconds,
            };
            if let Some(l) = logs.as_mut() {
                l.plan(&record)?;
            }
            plans.push(record);
            pending.push_back(Handoff { active_from: i + latency_ticks, planned_at: t, step });
            replan = false;
        }
        while pending.front().is_some_and(|h| h.active_from <= i) {
            active = pending.pop_front();
        }
        let reference = match &active {
            Some(h) => h.reference(t, f.planner.dt),
            None => JointReference::hold(&q_meas),
        };
        let out = if f.controllers {
            controller.mode_step(model, &TickInput { time: t, q: &q_meas, qd: &qd, reference: &reference })?
        } else {
            TickOutput {
                mode,
                torque: DVector::zeros(n),
                r_hat: DVector::zeros(n),
                f_des: 0.0,
                contact_link: None,
                transition: None,
            }
        };
        if let Some((_, to)) = out.transition {
            report.record_transition(t, to, out.contact_link);
            replan = true;
        }

        let poses = forward_kinematics(model, &q)?;
        let ee = poses[n];
        let target = scenario.reference_at(task_time);
        let rot_err = so3_log(&(ee.rotation.transpose() * target.rotation)).norm();
        let distances = closest_pair_per_link(model, &q, &scenario.obstacles_at(t))?;
        let mut link_distances = vec![f64::INFINITY; n];
        for r in &distances.results {
            link_distances[r.link_index] = link_distances[r.link_index].min(r.distance);
        }
        let record = TickRecord {
            time: t,
            task_time,
            mode: out.mode,
            q: q.clone(),
            qd: qd.clone(),
            tau: out.torque.clone(),
            r_hat: out.r_hat,
            contact_link: out.contact_link,
            f_des: out.f_des,
            link_distances,
            ee_position: ee.translation,
            ref_position: target.translation,
            ee_position_error: (target.translation - ee.translation).norm(),
            ee_rotation_error: rot_err,
        };
        report.record_tick(&record);
        if let Some(l) = logs.as_mut() {
            l.tick(&record)?;
        }
        if options.keep_trace {
            trace.push(record);
        }

        let tau_ext = contact_torque(scenario, &poses, t)?;
        (q, qd) = rk4_step(model, &q, &qd, &out.torque, &tau_ext, dt)?;
        if q.iter().chain(qd.iter()).any(|v| !v.is_finite()) {
            return Err(Error::SolverAbort(format!("plant state diverged at t = {t:.3}")));
        }
        if out.mode == Mode::Tracking {
            task_time += dt;
        }
    }
    report.finalize(&plans);
    if let Some(l) = logs.as_mut() {
        l.finish(&report)?;
    }
    Ok(RunResult { report, trace, plans })
}

#[cfg(test)]
mod tests;
