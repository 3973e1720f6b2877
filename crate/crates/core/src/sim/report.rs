use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::{PlanRecord, Scenario, TickRecord};
use crate::controller::Mode;
use crate::error::{Error, Result};

/// Grace period after a push ends during which a detection is still attributed to it.
pub const DETECTION_GRACE: f64 = 1.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WaypointError {
    /// Task-clock instant of the evaluation.
    pub task_time: f64,
    pub position: f64,
    pub rotation: f64,
    /// False when the run ended before the task clock got there (last tick used).
    pub reached: bool,
}

impl WaypointError {
    pub fn norm(&self) -> f64 {
        self.position.hypot(self.rotation)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub event: usize,
    pub start: f64,
    pub end: f64,
    pub latency: Option<f64>,
    pub link: Option<usize>,
    pub pushed_link: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeChange {
    pub time: f64,
    pub mode: Mode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub calls: usize,
    pub fallbacks: usize,
    pub not_converged: usize,
    pub mean_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub mean_iterations: f64,
    pub max_iterations: usize,
}

impl SolverStats {
    pub fn from_records(plans: &[PlanRecord]) -> Self {
        if plans.is_empty() {
            return Self::default();
        }
        let mut ms: Vec<f64> = plans.iter().map(|p| p.solve_seconds * 1e3).collect();
        ms.sort_by(f64::total_cmp);
        let k = plans.len() as f64;
        Self {
            calls: plans.len(),
            fallbacks: plans.iter().filter(|p| p.fallback).count(),
            not_converged: plans.iter().filter(|p| !p.converged).count(),
            mean_ms: ms.iter().sum::<f64>() / k,
            p95_ms: percentile(&ms, 0.95),
            max_ms: ms[ms.len() - 1],
            mean_iterations: plans.iter().map(|p| p.iterations as f64).sum::<f64>() / k,
            max_iterations: plans.iter().map(|p| p.iterations).max().unwrap_or(0),
        }
    }
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let rank = (p * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub fingerprint: String,
    pub duration: f64,
    pub ticks: usize,
    pub planner_horizon: usize,
    pub shooting: String,
    pub task_oriented: bool,
    /// Smallest distance of each link to any obstacle over the run (m).
    pub min_clearance_per_link: Vec<f64>,
    pub rms_ee_position_error: f64,
    pub rms_ee_error: f64,
    pub waypoint_errors: Vec<WaypointError>,
    pub detections: Vec<Detection>,
    pub mode_timeline: Vec<ModeChange>,
    pub solver: SolverStats,
    pub log_dir: Option<PathBuf>,
    pub aborted: Option<String>,
    #[serde(skip)]
    acc: Accumulator,
}

#[derive(Clone, Debug, Default, PartialEq)]
struct Accumulator {
    sum_sq_position: f64,
    sum_sq_error: f64,
    eval_times: Vec<f64>,
    last: Option<(f64, f64, f64)>,
}

impl RunReport {
    pub fn new(scenario: &Scenario, log_dir: &Option<PathBuf>) -> Self {
        let f = &scenario.file;
        let n = scenario.model.dof();
        Self {
            scenario: f.name.clone(),
            fingerprint: scenario.geometry_fingerprint(),
            duration: f.duration,
            ticks: 0,
            planner_horizon: f.planner.horizon,
            shooting: format!("{:?}", f.planner.shooting).to_lowercase(),
            task_oriented: f.planner.task_oriented,
            min_clearance_per_link: vec![f64::INFINITY; n],
            rms_ee_position_error: 0.0,
            rms_ee_error: 0.0,
            waypoint_errors: Vec::new(),
            detections: f
                .contact_events
                .iter()
                .enumerate()
                .map(|(event, e)| Detection { event, start: e.start, end: e.end, latency: None, link: None, pushed_link: e.link })
                .collect(),
            mode_timeline: vec![ModeChange { time: 0.0, mode: Mode::Tracking }],
            solver: SolverStats::default(),
            log_dir: log_dir.clone(),
            aborted: None,
            acc: Accumulator { eval_times: scenario.evaluation_times(), ..Default::default() },
        }
    }

    pub(crate) fn record_tick(&mut self, r: &TickRecord) {
        self.ticks += 1;
        for (m, d) in self.min_clearance_per_link.iter_mut().zip(&r.link_distances) {
            *m = m.min(*d);
        }
        self.acc.sum_sq_position += r.ee_position_error.powi(2);
        self.acc.sum_sq_error += r.ee_error().powi(2);
        let next = self.waypoint_errors.len();
        if next < self.acc.eval_times.len() && r.task_time >= self.acc.eval_times[next] - 1e-9 {
            self.waypoint_errors.push(WaypointError {
                task_time: r.task_time,
                position: r.ee_position_error,
                rotation: r.ee_rotation_error,
                reached: true,
            });
        }
        self.acc.last = Some((r.task_time, r.ee_position_error, r.ee_rotation_error));
    }

    pub(crate) fn record_transition(&mut self, t: f64, to: Mode, link: Option<usize>) {
        self.mode_timeline.push(ModeChange { time: t, mode: to });
        if to != Mode::ContactSafe {
            return;
        }
        let hit = self
            .detections
            .iter_mut()
            .find(|d| d.latency.is_none() && d.start <= t + 1e-9 && t <= d.end + DETECTION_GRACE);
        if let Some(d) = hit {
            d.latency = Some(t - d.start);
            d.link = link;
        }
    }

    pub(crate) fn finalize(&mut self, plans: &[PlanRecord]) {
        let k = self.ticks.max(1) as f64;
        self.rms_ee_position_error = (self.acc.sum_sq_position / k).sqrt();
        self.rms_ee_error = (self.acc.sum_sq_error / k).sqrt();
        if let Some((tt, p, r)) = self.acc.last {
            while self.waypoint_errors.len() < self.acc.eval_times.len() {
                self.waypoint_errors.push(WaypointError { task_time: tt, position: p, rotation: r, reached: false });
            }
        }
        self.solver = SolverStats::from_records(plans);
    }

    /// Mode sequence without timestamps.
    pub fn modes(&self) -> Vec<Mode> {
        self.mode_timeline.iter().map(|m| m.mode).collect()
    }

    /// Link with the smallest clearance over the run.
    pub fn nearest_link(&self) -> Option<usize> {
        self.min_clearance_per_link
            .iter()
            .enumerate()
            .filter(|(_, d)| d.is_finite())
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
    }

    pub fn min_clearance(&self) -> f64 {
        self.min_clearance_per_link.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_text(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::config("report", e.to_string()))
    }
}

/// Differences `a − b` between two runs of the same scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub waypoint_error_deltas: Vec<f64>,
    pub clearance_deltas: Vec<f64>,
    pub rms_error_delta: f64,
    pub mean_solve_ms_delta: f64,
}

impl RunComparison {
    pub fn to_text(&self) -> String {
        toml::to_string(self).expect("comparison serializes")
    }
}

pub fn compare_runs(a: &RunReport, b: &RunReport) -> Result<RunComparison> {
    if a.fingerprint != b.fingerprint {
        return Err(Error::MismatchedRuns("scene fingerprints differ".into()));
    }
    if a.waypoint_errors.len() != b.waypoint_errors.len() || a.min_clearance_per_link.len() != b.min_clearance_per_link.len() {
        return Err(Error::MismatchedRuns("reports have different shapes".into()));
    }
    let delta = |x: f64, y: f64| if x == y { 0.0 } else { x - y };
    Ok(RunComparison {
        waypoint_error_deltas: a.waypoint_errors.iter().zip(&b.waypoint_errors).map(|(x, y)| delta(x.norm(), y.norm())).collect(),
        clearance_deltas: a
            .min_clearance_per_link
            .iter()
            .zip(&b.min_clearance_per_link)
            .map(|(x, y)| delta(*x, *y))
            .collect(),
        rms_error_delta: delta(a.rms_ee_error, b.rms_ee_error),
        mean_solve_ms_delta: delta(a.solver.mean_ms, b.solver.mean_ms),
    })
}
