//! Scenario files: robot, obstacles with optional motion tracks, end-effector waypoints,
//! scripted contact pushes and the planner/controller settings of one closed-loop run.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::controller::ControllerConfig;
use crate::error::{Error, Result};
use crate::geometry::{Primitive, Shape, ShapeSpec};
use crate::model::{panda_like, planar_2r, planar_3r, Pose, RobotModel};
use crate::planner::MpcConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackPoint {
    pub t: f64,
    pub position: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleSpec {
    #[serde(default)]
    pub name: String,
    /// `sphere`, `capsule` or `box`.
    pub kind: String,
    pub radius: Option<f64>,
    pub a: Option<[f64; 3]>,
    pub b: Option<[f64; 3]>,
    pub half_extents: Option<[f64; 3]>,
    #[serde(default)]
    pub position: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    /// Piecewise-linear pose track; overrides `position`/`rpy` when present.
    #[serde(default)]
    pub track: Vec<TrackPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointSpec {
    pub t: f64,
    pub position: [f64; 3],
    /// Orientation; the initial end-effector orientation when omitted.
    pub rpy: Option<[f64; 3]>,
    /// Seconds the reference stays on this waypoint after reaching it.
    #[serde(default)]
    pub hold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContactEvent {
    pub start: f64,
    pub end: f64,
    pub link: usize,
    /// World-frame force in N.
    pub force: [f64; 3],
    /// Application point in the link's joint frame.
    #[serde(default)]
    pub point: [f64; 3],
}

impl ContactEvent {
    pub fn active(&self, t: f64) -> bool {
        t >= self.start && t < self.end
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: String,
    /// Robot description file (relative to the scenario file) or `builtin:<name>`.
    pub robot: String,
    #[serde(default = "yes")]
    pub gravity: bool,
    pub duration: f64,
    #[serde(default = "default_planner_rate")]
    pub planner_rate: f64,
    #[serde(default = "default_control_rate")]
    pub control_rate: f64,
    #[serde(default = "default_obstacle_rate")]
    pub obstacle_rate: f64,
    /// Seconds between a planner call and the moment its output reaches the controller.
    #[serde(default)]
    pub planner_latency: f64,
    #[serde(default)]
    pub seed: u64,
    /// Standard deviation of additive joint-position measurement noise (rad).
    #[serde(default)]
    pub measurement_noise: f64,
    pub initial_q: Vec<f64>,
    /// Initial joint velocities; zero when omitted.
    #[serde(default)]
    pub initial_qd: Option<Vec<f64>>,
    /// False leaves the plant unactuated (no planner, zero torque).
    #[serde(default = "yes")]
    pub controllers: bool,
    #[serde(default)]
    pub obstacles: Vec<ObstacleSpec>,
    #[serde(default)]
    pub reference: Vec<WaypointSpec>,
    #[serde(default)]
    pub contact_events: Vec<ContactEvent>,
    #[serde(default)]
    pub planner: MpcConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
}

fn yes() -> bool {
    true
}
fn default_planner_rate() -> f64 {
    50.0
}
fn default_control_rate() -> f64 {
    1000.0
}
fn default_obstacle_rate() -> f64 {
    30.0
}

#[derive(Clone, Debug)]
pub struct Obstacle {
    pub name: String,
    pub shapes: Vec<Shape>,
    /// Time-stamped poses; a single entry means a static obstacle.
    pub track: Vec<(f64, Pose)>,
}

impl Obstacle {
    pub fn pose_at(&self, t: f64) -> Pose {
        let track = &self.track;
        if t <= track[0].0 || track.len() == 1 {
            return track[0].1;
        }
        for w in track.windows(2) {
            let ((t0, p0), (t1, p1)) = (w[0], w[1]);
            if t < t1 {
                let s = if t1 > t0 { (t - t0) / (t1 - t0) } else { 1.0 };
                return p0.interpolate(&p1, s);
            }
        }
        track[track.len() - 1].1
    }

    pub fn primitives_at(&self, t: f64) -> Vec<Primitive> {
        let pose = self.pose_at(t);
        self.shapes.iter().map(|s| Primitive { shape: s.clone(), pose }).collect()
    }
}

#[derive(Clone, Debug)]
pub struct Waypoint {
    pub t: f64,
    pub pose: Pose,
    pub hold: f64,
}

/// Validated scenario ready to run.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub model: RobotModel,
    pub initial_q: DVector<f64>,
    pub initial_qd: DVector<f64>,
    pub obstacles: Vec<Obstacle>,
    /// Waypoints including the implicit initial pose at `t = 0`.
    pub waypoints: Vec<Waypoint>,
}

impl Scenario {
    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn planner_divisor(&self) -> usize {
        (self.file.control_rate / self.file.planner_rate).round() as usize
    }

    pub fn control_dt(&self) -> f64 {
        1.0 / self.file.control_rate
    }

    pub fn obstacles_at(&self, t: f64) -> Vec<Primitive> {
        self.obstacles.iter().flat_map(|o| o.primitives_at(t)).collect()
    }

    /// End-effector reference on the task clock.
    pub fn reference_at(&self, t: f64) -> Pose {
        let w = &self.waypoints;
        for (i, wp) in w.iter().enumerate() {
            if t < wp.t {
                let prev = &w[i - 1];
                let leave = prev.t + prev.hold;
                if t <= leave {
                    return prev.pose;
                }
                return prev.pose.interpolate(&wp.pose, (t - leave) / (wp.t - leave));
            }
        }
        w[w.len() - 1].pose
    }

    /// Task-clock instants at which each scripted waypoint's error is evaluated (end of its hold).
    pub fn evaluation_times(&self) -> Vec<f64> {
        self.waypoints.iter().skip(1).map(|w| w.t + w.hold).collect()
    }

    /// SHA-256 over everything that defines the scene: robot, obstacles, waypoints and pushes.
    pub fn geometry_fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.model.to_toml_string().as_bytes());
        let scene = toml::to_string(&SceneDigest {
            initial_q: &self.file.initial_q,
            initial_qd: &self.file.initial_qd,
            obstacles: &self.file.obstacles,
            reference: &self.file.reference,
            contact_events: &self.file.contact_events,
        })
        .expect("scene serializes");
        h.update(scene.as_bytes());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[derive(Serialize)]
struct SceneDigest<'a> {
    initial_q: &'a [f64],
    initial_qd: &'a Option<Vec<f64>>,
    obstacles: &'a [ObstacleSpec],
    reference: &'a [WaypointSpec],
    contact_events: &'a [ContactEvent],
}

fn builtin(name: &str) -> Option<RobotModel> {
    match name {
        "panda_like" => Some(panda_like()),
        "planar_2r" => Some(planar_2r(1.0, 1.0, 1.0, 1.0)),
        "planar_3r" => Some(planar_3r()),
        _ => None,
    }
}

/// Applies `section.key=value` overrides to a parsed document. Values are read as TOML
/// literals, falling back to a plain string.
pub fn apply_overrides(doc: &mut toml::Table, overrides: &[String]) -> Result<()> {
    for item in overrides {
        let (path, raw) = item
            .split_once('=')
            .ok_or_else(|| Error::config(item.clone(), "override must look like section.key=value"))?;
        let keys: Vec<&str> = path.trim().split('.').collect();
        if keys.iter().any(|k| k.is_empty()) {
            return Err(Error::config(path, "empty key in override"));
        }
        let value = match toml::from_str::<toml::Table>(&format!("v = {}", raw.trim())) {
            Ok(mut t) => t.remove("v").expect("parsed key"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut table = &mut *doc;
        for key in &keys[..keys.len() - 1] {
            let entry = table.entry(key.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
            table = entry.as_table_mut().ok_or_else(|| Error::config(path, format!("`{key}` is not a section")))?;
        }
        table.insert(keys[keys.len() - 1].to_string(), value);
    }
    Ok(())
}

/// Parses scenario text; `base` resolves relative robot paths and labels diagnostics.
pub fn parse_scenario(text: &str, base: &Path, overrides: &[String]) -> Result<Scenario> {
    let label = base.display().to_string();
    let file: ScenarioFile = if overrides.is_empty() {
        toml::from_str(text).map_err(|e| Error::config(&label, e.to_string()))?
    } else {
        let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::config(&label, e.to_string()))?;
        apply_overrides(&mut doc, overrides)?;
        ScenarioFile::deserialize(doc).map_err(|e| Error::config(&label, e.to_string()))?
    };
    let dir = base.parent().map(Path::to_path_buf).unwrap_or_default();
    build(file, &dir)
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    load_scenario_with(path, &[])
}

pub fn load_scenario_with(path: impl AsRef<Path>, overrides: &[String]) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
    parse_scenario(&text, path, overrides)
}

fn field_err(field: impl Into<String>, msg: impl Into<String>) -> Error {
    Error::config(field, msg)
}

fn obstacle_shapes(spec: &ObstacleSpec, field: &str) -> Result<Vec<Shape>> {
    let need = |v: Option<f64>, k: &str| v.ok_or_else(|| field_err(format!("{field}.{k}"), "required for this kind"));
    let need3 = |v: Option<[f64; 3]>, k: &str| v.ok_or_else(|| field_err(format!("{field}.{k}"), "required for this kind"));
    let shape = match spec.kind.as_str() {
        "sphere" => ShapeSpec::Sphere { radius: need(spec.radius, "radius")? },
        "capsule" => ShapeSpec::Capsule { radius: need(spec.radius, "radius")?, a: need3(spec.a, "a")?, b: need3(spec.b, "b")? },
        "box" => ShapeSpec::Box { half_extents: need3(spec.half_extents, "half_extents")? },
        other => return Err(field_err(format!("{field}.kind"), format!("unknown kind `{other}` (sphere, capsule, box)"))),
    };
    shape.to_shapes().map_err(|e| field_err(field, e.to_string()))
}

fn check_times(times: impl Iterator<Item = f64>, field: &str) -> Result<()> {
    let mut last = f64::NEG_INFINITY;
    for (i, t) in times.enumerate() {
        if !t.is_finite() || t < 0.0 {
            return Err(field_err(format!("{field}[{i}].t"), "time must be finite and nonnegative"));
        }
        if t < last {
            return Err(field_err(format!("{field}[{i}].t"), format!("times must be nondecreasing ({t} after {last})")));
        }
        last = t;
    }
    Ok(())
}

fn build(file: ScenarioFile, dir: &Path) -> Result<Scenario> {
    let mut model = match file.robot.strip_prefix("builtin:") {
        Some(name) => builtin(name).ok_or_else(|| field_err("robot", format!("unknown builtin model `{name}`")))?,
        None => RobotModel::load(dir.join(&file.robot))?,
    };
    if !file.gravity {
        model = model.without_gravity();
    }
    let n = model.dof();
    if !(file.duration > 0.0 && file.duration.is_finite()) {
        return Err(field_err("duration", "must be positive"));
    }
    for (v, f) in [(file.control_rate, "control_rate"), (file.planner_rate, "planner_rate"), (file.obstacle_rate, "obstacle_rate")] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(field_err(f, "must be positive"));
        }
    }
    let div = file.control_rate / file.planner_rate;
    if (div - div.round()).abs() > 1e-9 || div < 1.0 {
        return Err(field_err("planner_rate", "control_rate must be an integer multiple of planner_rate"));
    }
    if !(file.planner_latency >= 0.0) {
        return Err(field_err("planner_latency", "must be nonnegative"));
    }
    if !(file.measurement_noise >= 0.0) {
        return Err(field_err("measurement_noise", "must be nonnegative"));
    }
    if file.initial_q.len() != n {
        return Err(field_err("initial_q", format!("expected {n} entries, got {}", file.initial_q.len())));
    }
    let initial_q = DVector::from_column_slice(&file.initial_q);
    let (lo, hi) = (model.lower_position_limits(), model.upper_position_limits());
    if let Some(i) = (0..n).find(|&i| initial_q[i] < lo[i] || initial_q[i] > hi[i]) {
        return Err(field_err(format!("initial_q[{i}]"), "outside the joint limits"));
    }
    let initial_qd = match &file.initial_qd {
        None => DVector::zeros(n),
        Some(v) if v.len() == n && v.iter().all(|x| x.is_finite()) => DVector::from_column_slice(v),
        Some(v) => return Err(field_err("initial_qd", format!("expected {n} finite entries, got {}", v.len()))),
    };
    file.planner.validate(n)?;
    file.controller.resolve(n, 1.0 / file.control_rate)?;

    let mut obstacles = Vec::new();
    for (k, spec) in file.obstacles.iter().enumerate() {
        let field = format!("obstacles[{k}]");
        let shapes = obstacle_shapes(spec, &field)?;
        check_times(spec.track.iter().map(|p| p.t), &format!("{field}.track"))?;
        let track = if spec.track.is_empty() {
            vec![(0.0, Pose::from_rpy(spec.position.into(), spec.rpy.into()))]
        } else {
            spec.track.iter().map(|p| (p.t, Pose::from_rpy(p.position.into(), p.rpy.into()))).collect()
        };
        let name = if spec.name.is_empty() { format!("obstacle{k}") } else { spec.name.clone() };
        obstacles.push(Obstacle { name, shapes, track });
    }

    check_times(file.reference.iter().map(|w| w.t), "reference")?;
    let start = crate::model::forward_kinematics(&model, &initial_q)?[n];
    let mut waypoints = vec![Waypoint { t: 0.0, pose: start, hold: 0.0 }];
    let mut free_from = 0.0;
    for (i, w) in file.reference.iter().enumerate() {
        if !(w.hold >= 0.0) {
            return Err(field_err(format!("reference[{i}].hold"), "must be nonnegative"));
        }
        if w.t < free_from || (i == 0 && w.t <= 0.0) {
            return Err(field_err(format!("reference[{i}].t"), "waypoint reached before the previous hold ends"));
        }
        let rotation = match w.rpy {
            Some(rpy) => Pose::from_rpy(Vector3::zeros(), rpy.into()).rotation,
            None => start.rotation,
        };
        waypoints.push(Waypoint { t: w.t, pose: Pose::new(rotation, w.position.into()), hold: w.hold });
        free_from = w.t + w.hold;
    }

    for (i, e) in file.contact_events.iter().enumerate() {
        if !(e.start >= 0.0 && e.end > e.start) {
            return Err(field_err(format!("contact_events[{i}].end"), "events need 0 <= start < end"));
        }
        if e.link >= n {
            return Err(field_err(format!("contact_events[{i}].link"), format!("link index must be below {n}")));
        }
    }
    Ok(Scenario { file, model, initial_q, initial_qd, obstacles, waypoints })
}

/// Directory of bundled scenario files next to the workspace root.
pub fn bundled_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenarios")
}
