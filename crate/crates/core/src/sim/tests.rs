use std::path::{Path, PathBuf};

use nalgebra::DVector;

use super::scenario::bundled_dir;
use super::*;
use crate::model::dynamics::{bias_torque, mass_matrix};

const PLANAR: &str = r#"
name = "t"
robot = "builtin:planar_2r"
duration = 1.0
initial_q = [0.3, 0.6]

[planner]
N = 10
"#;

fn parse(text: &str, overrides: &[&str]) -> Result<Scenario> {
    let ov: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    parse_scenario(text, Path::new("inline.toml"), &ov)
}

fn bundled(name: &str) -> PathBuf {
    bundled_dir().join(name)
}

fn traced(s: &Scenario) -> RunResult {
    run(s, &RunOptions { output_dir: None, keep_trace: true }).unwrap()
}

#[test]
fn minimal_scenario_is_valid() {
    let s = load_scenario(bundled("minimal.toml")).unwrap();
    assert_eq!(s.model.dof(), 2);
    assert_eq!(s.waypoints.len(), 1);
    assert_eq!(s.file.duration, 1.0);
}

#[test]
fn out_of_order_waypoints_name_the_field() {
    let text = format!("{PLANAR}\n[[reference]]\nt = 0.8\nposition = [1.0, 1.0, 0.0]\n\n[[reference]]\nt = 0.5\nposition = [1.0, 0.9, 0.0]\n");
    match parse(&text, &[]) {
        Err(Error::Config { location, .. }) => assert_eq!(location, "reference[1].t"),
        other => panic!("expected a config error, got {other:?}"),
    }
}

#[test]
fn invalid_fields_are_named() {
    let cases = [
        ("duration=0.0", "duration"),
        ("planner_rate=300.0", "planner_rate"),
        ("initial_q=[0.1]", "initial_q"),
        ("initial_qd=[0.1, 0.2, 0.3]", "initial_qd"),
    ];
    for (ov, field) in cases {
        match parse(PLANAR, &[ov]) {
            Err(Error::Config { location, .. }) => assert_eq!(location, field, "{ov}"),
            other => panic!("{ov}: expected a config error, got {other:?}"),
        }
    }
}

#[test]
fn all_bundled_scenarios_load() {
    let mut names: Vec<_> = std::fs::read_dir(bundled_dir())
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    names.sort();
    assert!(names.len() >= 6);
    for p in &names {
        load_scenario(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
    }
    let cabinet = load_scenario(bundled("cabinet.toml")).unwrap();
    assert_eq!(cabinet.evaluation_times().len(), 3);
    assert!(!cabinet.obstacles.is_empty());
}

#[test]
fn overrides_reach_the_scenario() {
    let s = parse(PLANAR, &["planner.N=7", "seed=3", "controller.null_damping=4.5"]).unwrap();
    assert_eq!(s.file.planner.horizon, 7);
    assert_eq!(s.file.seed, 3);
    assert_eq!(s.file.controller.null_damping, crate::planner::config::Diag::Scalar(4.5));
    assert!(parse(PLANAR, &["planner.N"]).is_err());
    assert!(parse(PLANAR, &["planner.bogus=1"]).is_err());
}

#[test]
fn zero_gravity_hold_stays_at_rest() {
    let s = parse(PLANAR, &["gravity=false"]).unwrap();
    let r = traced(&s);
    for rec in &r.trace {
        assert!((&rec.q - &s.initial_q).amax() < 1e-6, "t = {}", rec.time);
        let (_, bias) = bias_torque(&s.model, &rec.q, &rec.qd).unwrap();
        assert!((&rec.tau - bias).amax() < 1e-6, "t = {}", rec.time);
    }
}

#[test]
fn gravity_hold_torque_matches_bias() {
    let s = parse(PLANAR, &[]).unwrap();
    let r = traced(&s);
    let last = r.trace.last().unwrap();
    let (_, bias) = bias_torque(&s.model, &last.q, &last.qd).unwrap();
    assert!((&last.tau - &bias).amax() < 1e-3 * bias.amax().max(1.0));
    assert!(last.ee_position_error < 1e-3);
}

#[test]
fn unactuated_plant_conserves_kinetic_energy() {
    let s = parse(
        PLANAR,
        &["gravity=false", "controllers=false", "duration=10.0", "initial_qd=[1.5, -2.0]"],
    )
    .unwrap();
    let r = traced(&s);
    let ke = |q: &DVector<f64>, qd: &DVector<f64>| 0.5 * qd.dot(&(mass_matrix(&s.model, q).unwrap() * qd));
    let e0 = ke(&s.initial_q, &s.initial_qd);
    let worst = r.trace.iter().map(|t| (ke(&t.q, &t.qd) - e0).abs() / e0).fold(0.0, f64::max);
    assert!(worst < 1e-4, "relative drift {worst}");
    assert!(r.plans.is_empty());
    assert!(r.trace.iter().all(|t| t.tau.amax() == 0.0));
}

#[test]
fn planner_runs_on_its_divisor() {
    let s = parse(PLANAR, &["planner_rate=20.0"]).unwrap();
    let r = traced(&s);
    assert_eq!(r.plans.len(), 20);
    for (k, p) in r.plans.iter().enumerate() {
        assert!((p.time - k as f64 * 0.05).abs() < 1e-9);
    }
    assert_eq!(r.report.solver.calls, 20);
}

#[test]
fn latency_holds_the_previous_plan() {
    let s = parse(PLANAR, &["planner_rate=20.0", "planner_latency=0.01"]).unwrap();
    let r = traced(&s);
    assert_eq!(r.plans.len(), 20);
    // Before the first plan arrives the controller holds the measured pose.
    assert!(r.trace[..10].iter().all(|t| (&t.q - &s.initial_q).amax() < 1e-6));
}

#[test]
fn reruns_are_byte_identical() {
    let s = parse(PLANAR, &["measurement_noise=1e-4", "seed=11"]).unwrap();
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    for d in &dirs {
        run(&s, &RunOptions { output_dir: Some(d.path().to_path_buf()), keep_trace: false }).unwrap();
    }
    for name in ["log.csv", "distances.csv", "ee.csv"] {
        let a = std::fs::read(dirs[0].path().join(name)).unwrap();
        let b = std::fs::read(dirs[1].path().join(name)).unwrap();
        assert!(!a.is_empty());
        assert!(a == b, "{name} differs");
    }
    let other = parse(PLANAR, &["measurement_noise=1e-4", "seed=12"]).unwrap();
    let d = tempfile::tempdir().unwrap();
    run(&other, &RunOptions { output_dir: Some(d.path().to_path_buf()), keep_trace: false }).unwrap();
    let a = std::fs::read(dirs[0].path().join("log.csv")).unwrap();
    assert!(a != std::fs::read(d.path().join("log.csv")).unwrap());
}

#[test]
fn report_round_trips_through_text() {
    let s = parse(PLANAR, &[]).unwrap();
    let r = traced(&s).report;
    let back = RunReport::from_text(&r.to_text()).unwrap();
    assert_eq!(back.fingerprint, r.fingerprint);
    assert_eq!(back.ticks, 1000);
}

#[test]
fn identical_runs_compare_to_zero() {
    let s = load_scenario(bundled("minimal.toml")).unwrap();
    let a = traced(&s).report;
    let b = traced(&s).report;
    let c = compare_runs(&a, &b).unwrap();
    assert!(c.waypoint_error_deltas.iter().all(|d| *d == 0.0));
    assert!(c.clearance_deltas.iter().all(|d| *d == 0.0));
    assert_eq!(c.rms_error_delta, 0.0);
    assert_eq!(compare_runs(&a, &a).unwrap().mean_solve_ms_delta, 0.0);
}

#[test]
fn different_scenes_are_not_compared() {
    let a = traced(&parse(PLANAR, &[]).unwrap()).report;
    let b = traced(&parse(PLANAR, &["initial_q=[0.2, 0.6]"]).unwrap()).report;
    assert!(matches!(compare_runs(&a, &b), Err(Error::MismatchedRuns(_))));
    // Planner settings are not part of the scene.
    let c = traced(&parse(PLANAR, &["planner.N=12"]).unwrap()).report;
    assert!(compare_runs(&a, &c).is_ok());
}

#[test]
fn push_maps_through_point_jacobian() {
    let text = format!("{PLANAR}\n[[contact_events]]\nstart = 0.0\nend = 1.0\nlink = 1\nforce = [0.0, 10.0, 0.0]\npoint = [0.5, 0.0, 0.0]\n");
    let s = parse(&text, &[]).unwrap();
    let q = DVector::from_vec(vec![0.0, 0.0]);
    let poses = forward_kinematics(&s.model, &q).unwrap();
    let tau = contact_torque(&s, &poses, 0.5).unwrap();
    // Straight arm along x: the point sits 1.5 m from joint 0 and 0.5 m from joint 1.
    assert!((tau[0] - 15.0).abs() < 1e-9 && (tau[1] - 5.0).abs() < 1e-9, "{tau}");
    assert_eq!(contact_torque(&s, &poses, 1.0).unwrap().amax(), 0.0);
}

#[test]
fn overhead_sphere_keeps_clearance() {
    let s = load_scenario(bundled("overhead_sphere.toml")).unwrap();
    let r = run(&s, &RunOptions::default()).unwrap().report;
    assert!(r.min_clearance() >= 0.02 - 1e-4, "clearance {}", r.min_clearance());
    assert!(r.waypoint_errors.iter().all(|w| w.reached));
}

#[test]
fn push_timeline_has_two_episodes() {
    let s = load_scenario(bundled("contact_line.toml")).unwrap();
    let r = run(&s, &RunOptions::default()).unwrap().report;
    let entries: Vec<f64> =
        r.mode_timeline.iter().filter(|m| m.mode == Mode::ContactSafe).map(|m| m.time).collect();
    assert_eq!(entries.len(), 2, "{:?}", r.mode_timeline);
    for (t, start) in entries.iter().zip([3.0, 10.0]) {
        assert!((t - start).abs() <= 0.05, "entered at {t}, push at {start}");
    }
    assert_eq!(*r.modes().last().unwrap(), Mode::Tracking);
}
