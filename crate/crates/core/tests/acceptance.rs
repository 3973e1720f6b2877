//! End-to-end acceptance criteria. Each test prints one `PASS`/`FAIL` line before asserting;
//! run with `--nocapture` to see them.

use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::{DVector, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use safe_manip::cli::validate;
use safe_manip::controller::{contact_point, ControllerConfig, ControllerState, JointReference, Mode, TickInput};
use safe_manip::model::{forward_kinematics, panda_like, point_jacobian, rk4_step};
use safe_manip::sim::{load_scenario, load_scenario_with, parse_scenario, run, RunOptions, RunResult};

fn scenario_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn verdict(id: u32, name: &str, pass: bool, detail: String) -> bool {
    println!("criterion {id} {name}: {} ({detail})", if pass { "PASS" } else { "FAIL" });
    pass
}

fn traced(path: &Path, overrides: &[String]) -> RunResult {
    let s = load_scenario_with(path, overrides).unwrap();
    run(&s, &RunOptions { output_dir: None, keep_trace: true }).unwrap()
}

#[test]
fn criterion_1_clearance_guarantee() {
    let start = Instant::now();
    let s = load_scenario(scenario_path("overhead_sphere.toml")).unwrap();
    assert_eq!(s.model.dof(), 7);
    let r = run(&s, &RunOptions::default()).unwrap().report;
    let secs = start.elapsed().as_secs_f64();
    let worst = r.min_clearance();
    let pass = r.min_clearance_per_link.iter().all(|d| *d >= 0.02 - 1e-4) && secs < 60.0;
    assert!(verdict(
        1,
        "clearance",
        pass,
        format!("min clearance {worst:.5} m on link {:?}, runtime {secs:.1} s", r.nearest_link())
    ));
}

#[test]
fn criterion_2_task_oriented_vs_baseline() {
    let path = scenario_path("cabinet.toml");
    let proposed = traced(&path, &[]).report;
    let baseline = traced(&path, &["planner.task_oriented=false".into()]).report;
    assert_eq!(proposed.waypoint_errors.len(), 3);
    let errors_smaller = proposed
        .waypoint_errors
        .iter()
        .zip(&baseline.waypoint_errors)
        .all(|(p, b)| p.reached && b.reached && p.norm() < b.norm());
    let near = baseline.nearest_link().expect("obstacles present");
    let clearance_larger = proposed.min_clearance_per_link[near] > baseline.min_clearance_per_link[near];
    let fmt = |r: &safe_manip::sim::RunReport| {
        r.waypoint_errors.iter().map(|w| format!("{:.5}", w.norm())).collect::<Vec<_>>().join("/")
    };
    let detail = format!(
        "errors proposed {} baseline {}; link {near} clearance proposed {:.4} baseline {:.4}",
        fmt(&proposed),
        fmt(&baseline),
        proposed.min_clearance_per_link[near],
        baseline.min_clearance_per_link[near]
    );
    assert!(verdict(2, "task-oriented superiority", errors_smaller && clearance_larger, detail));
}

#[test]
fn criterion_3_shooting_benchmark() {
    let path = scenario_path("bench.toml");
    let mean = |method: &str| {
        let ov = vec!["planner.N=50".to_string(), "planner.dt=0.05".into(), format!("planner.shooting=\"{method}\"")];
        let s = load_scenario_with(&path, &ov).unwrap();
        run(&s, &RunOptions::default()).unwrap().report.solver.mean_ms
    };
    let mut pass = true;
    let mut detail = Vec::new();
    for _ in 0..3 {
        let (m, s) = (mean("multiple"), mean("single"));
        pass &= m < s;
        detail.push(format!("{m:.2} vs {s:.2} ms"));
    }
    assert!(verdict(3, "shooting benchmark", pass, format!("multiple vs single at N = 50: {}", detail.join(", "))));
}

const PUSH_BASE: &str = r#"
name = "push"
robot = "builtin:panda_like"
duration = 1.3
planner_rate = 20.0
"#;

struct Push {
    q0: DVector<f64>,
    link: usize,
    point: Vector3<f64>,
    force: Vector3<f64>,
    peak: f64,
}

/// Tangential push on a middle link at mid-segment, tilted up to 30 degrees.
fn draw_push(rng: &mut ChaCha8Rng) -> Push {
    let model = panda_like();
    let home = [0.0, -0.3, 0.0, -2.2, 0.0, 2.0, 0.8];
    let q0 = DVector::from_iterator(7, home.iter().map(|v| v + rng.random_range(-0.2..0.2)));
    let poses = forward_kinematics(&model, &q0).unwrap();
    let link = rng.random_range(2..=5);
    let origin = poses[link].translation;
    let axis = poses[link].rotation * model.joints[link].axis;
    let p = origin + (contact_point(&model, &poses, link) - origin) * rng.random_range(0.3..0.8);
    let tangent = axis.cross(&(p - origin)).normalize();
    let tilt_axis = Unit::new_normalize(tangent.cross(&Vector3::new(
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
        rng.random_range(-1.0..1.0),
    )));
    let dir = Rotation3::from_axis_angle(&tilt_axis, rng.random_range(0.0..30f64.to_radians())) * tangent;
    let sign = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
    let force = dir * sign * rng.random_range(15.0..50.0);
    let jp = point_jacobian(&model, &poses, link, &p).unwrap();
    let peak = (jp.transpose() * DVector::from_column_slice(force.as_slice())).amax();
    let point = poses[link].rotation.transpose() * (p - origin);
    Push { q0, link, point, force, peak }
}

#[test]
fn criterion_4_contact_detection() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut lines = Vec::new();
    let mut hits = 0;
    let mut trials = 0;
    while trials < 10 {
        let push = draw_push(&mut rng);
        if push.peak < 5.0 {
            continue;
        }
        trials += 1;
        let v = |x: &[f64]| x.iter().map(|c| format!("{c:.6}")).collect::<Vec<_>>().join(", ");
        let text = format!(
            "{PUSH_BASE}initial_q = [{}]\n\n[[contact_events]]\nstart = 0.5\nend = 1.0\nlink = {}\nforce = [{}]\npoint = [{}]\n\n[planner]\nN = 10\n",
            v(push.q0.as_slice()),
            push.link,
            v(push.force.as_slice()),
            v(push.point.as_slice())
        );
        let s = parse_scenario(&text, Path::new("push.toml"), &[]).unwrap();
        let d = run(&s, &RunOptions::default()).unwrap().report.detections.remove(0);
        let ok = d.latency.is_some_and(|l| l <= 0.05) && d.link == Some(push.link);
        hits += ok as usize;
        lines.push(format!(
            "link {} peak {:.1} N·m: latency {} link {:?}",
            push.link,
            push.peak,
            d.latency.map_or("none".into(), |l| format!("{:.0} ms", l * 1e3)),
            d.link
        ));
    }
    for l in &lines {
        println!("  {l}");
    }
    assert!(verdict(4, "contact detection", hits == 10, format!("{hits}/10 detected within 50 ms on the pushed link")));
}

#[test]
fn criterion_5_task_consistency_under_contact() {
    let path = scenario_path("contact_line.toml");
    let s = load_scenario(&path).unwrap();
    let push = s.file.contact_events[0].clone();
    let r = run(&s, &RunOptions { output_dir: None, keep_trace: true }).unwrap();
    let during: Vec<_> = r.trace.iter().filter(|t| t.time >= push.start && t.time < push.end).collect();
    let rms = (during.iter().map(|t| t.ee_position_error.powi(2)).sum::<f64>() / during.len() as f64).sqrt();

    let dir = Vector3::from(push.force).normalize();
    let point_at = |q: &DVector<f64>| {
        let poses = forward_kinematics(&s.model, q).unwrap();
        poses[push.link].transform_point(&push.point.into())
    };
    let p0 = point_at(&during[0].q);
    let displacement = during.iter().map(|t| (point_at(&t.q) - p0).dot(&dir)).fold(f64::MIN, f64::max);

    // First instant after release from which the controller is tracking with < 5 mm error
    // until the next scripted event.
    let next = s.file.contact_events.get(1).map_or(s.file.duration, |e| e.start);
    let after: Vec<_> = r.trace.iter().filter(|t| t.time >= push.end && t.time < next).collect();
    let settled = after
        .iter()
        .rposition(|t| t.mode != Mode::Tracking || t.ee_position_error >= 0.005)
        .map_or(Some(push.end), |i| after.get(i + 1).map(|t| t.time));
    let recovery = settled.map(|t| t - push.end);

    let pass = rms < 0.02 && displacement >= 0.05 && recovery.is_some_and(|d| d <= 3.0);
    let detail = format!(
        "rms ee error {:.4} m, link {} displaced {:.4} m along the push, recovered {} after release",
        rms,
        push.link,
        displacement,
        recovery.map_or("never".into(), |d| format!("{d:.2} s"))
    );
    assert!(verdict(5, "task consistency under contact", pass, detail));
}

fn panda_controller() -> (safe_manip::model::RobotModel, ControllerState) {
    let model = panda_like();
    let settings = ControllerConfig::default().resolve(7, 1e-3).unwrap();
    (model, ControllerState::new(settings, 7).unwrap())
}

#[test]
fn criterion_6_observer_fidelity() {
    let dt = 1e-3;
    let q_hold = DVector::from_column_slice(&[0.0, -0.3, 0.0, -2.2, 0.0, 2.0, 0.8]);

    // Step of 2 N·m on joint 3 while holding a pose.
    let (model, mut ctrl) = panda_controller();
    let reference = JointReference::hold(&q_hold);
    let (mut q, mut qd) = (q_hold.clone(), DVector::zeros(7));
    let mut ext = DVector::zeros(7);
    ext[3] = 2.0;
    let mut estimate = DVector::zeros(7);
    for i in 0..=1000 {
        let out = ctrl.mode_step(&model, &TickInput { time: i as f64 * dt, q: &q, qd: &qd, reference: &reference }).unwrap();
        estimate = out.r_hat;
        (q, qd) = rk4_step(&model, &q, &qd, &out.torque, &ext, dt).unwrap();
    }
    let step_error = (&estimate - &ext).amax() / 2.0;

    // 60 s of fast joint sinusoids without any external torque.
    let (model, mut ctrl) = panda_controller();
    let amp = [0.5, 0.4, 0.5, 0.4, 0.6, 0.5, 0.8];
    let freq = [0.5, 0.4, 0.6, 0.5, 0.7, 0.6, 0.8];
    let target = |t: f64| {
        let w = |j: usize| 2.0 * std::f64::consts::PI * freq[j];
        let q = DVector::from_fn(7, |j, _| q_hold[j] + amp[j] * (w(j) * t).sin() * (1.0 - (-t).exp()));
        let qd = DVector::from_fn(7, |j, _| {
            amp[j] * (w(j) * (w(j) * t).cos() * (1.0 - (-t).exp()) + (w(j) * t).sin() * (-t).exp())
        });
        JointReference { q, qd }
    };
    let (mut q, mut qd) = (q_hold.clone(), DVector::zeros(7));
    let zero = DVector::zeros(7);
    let (mut false_positives, mut peak) = (0, 0.0f64);
    for i in 0..60_000 {
        let t = i as f64 * dt;
        let out = ctrl.mode_step(&model, &TickInput { time: t, q: &q, qd: &qd, reference: &target(t) }).unwrap();
        peak = peak.max(out.r_hat.amax());
        false_positives += out.transition.is_some() as usize;
        (q, qd) = rk4_step(&model, &q, &qd, &out.torque, &zero, dt).unwrap();
    }

    let pass = step_error <= 0.02 && false_positives == 0;
    let detail = format!(
        "step estimate off by {:.2}% after 1 s; {false_positives} detections in 60 s, peak |r| {peak:.3} N·m",
        step_error * 100.0
    );
    assert!(verdict(6, "observer fidelity", pass, detail));
}

#[test]
fn criterion_7_numerical_properties() {
    let results = validate::run_suites(7, None);
    print!("{}", validate::summary(&results));
    let suites_ok = results.iter().all(|r| r.ok());

    let s = load_scenario(scenario_path("minimal.toml")).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run(&s, &RunOptions { output_dir: Some(d.path().to_path_buf()), keep_trace: false }).unwrap();
    }
    let identical = ["log.csv", "distances.csv", "ee.csv"]
        .iter()
        .all(|f| std::fs::read(dirs[0].path().join(f)).unwrap() == std::fs::read(dirs[1].path().join(f)).unwrap());
    let failed: Vec<_> = results.iter().filter(|r| !r.ok()).map(|r| r.name).collect();
    let detail = format!("{} suites, failed {:?}; re-run logs identical: {identical}", results.len(), failed);
    assert!(verdict(7, "numerical properties", suites_ok && identical, detail));
}
