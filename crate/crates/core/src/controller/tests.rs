use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::model::{bias_torque, geometric_jacobian, panda_like, planar_2r, rk4_step, task_dynamics, Frame};

const DT: f64 = 1e-3;

fn dv(v: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(v)
}

fn paper_gains(n: usize) -> GainSet {
    GainSet::uniform(n, 200.0, 10.0, 10.0, 2.0, 500.0, 100.0)
}

fn settings(n: usize) -> ControllerSettings {
    ControllerConfig::default().resolve(n, DT).unwrap()
}

fn panda_q() -> DVector<f64> {
    dv(&[0.1, -0.4, 0.1, -2.0, 0.05, 1.8, 0.7])
}

/// Closed loop on a model: joint tracking of `reference(t)` with an external torque
/// `tau_ext(t, q)`; returns the torque estimates at every tick.
fn observe<R, E>(model: &RobotModel, k: f64, seconds: f64, q0: DVector<f64>, reference: R, tau_ext: E) -> Vec<DVector<f64>>
where
    R: Fn(f64) -> (DVector<f64>, DVector<f64>),
    E: Fn(f64, &DVector<f64>) -> DVector<f64>,
{
    let n = model.dof();
    let gains = paper_gains(n);
    let mut usde = UsdeState::new(n, k).unwrap();
    let (mut q, mut qd) = (q0, DVector::zeros(n));
    let mut tau = DVector::zeros(n);
    let mut out = Vec::new();
    let steps = (seconds / DT).round() as usize;
    for i in 0..=steps {
        let t = i as f64 * DT;
        out.push(usde_update(&mut usde, model, &q, &qd, &tau, DT).unwrap());
        let (qr, qdr) = reference(t);
        tau = tracking_torque(model, &q, &qd, &qr, &qdr, &gains).unwrap();
        let ext = tau_ext(t, &q);
        (q, qd) = rk4_step(model, &q, &qd, &tau, &ext, DT).unwrap();
    }
    out
}

#[test]
fn zero_error_gives_pure_compensation() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let (q, qd) = (dv(&[0.3, -0.7]), dv(&[0.5, 1.1]));
    let tau = tracking_torque(&model, &q, &qd, &q, &qd, &paper_gains(2)).unwrap();
    let (_, bias) = bias_torque(&model, &q, &qd).unwrap();
    assert_relative_eq!(tau, bias, epsilon = 1e-12);
}

#[test]
fn pd_portion_off_leaves_feedforward() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let (q, qd) = (dv(&[0.3, -0.7]), dv(&[0.5, 1.1]));
    let (qr, qdr) = (dv(&[0.4, -0.2]), dv(&[0.0, 0.3]));
    let mut gains = paper_gains(2);
    gains.kp2.fill(0.0);
    gains.kd2.fill(0.0);
    let tau = tracking_torque(&model, &q, &qd, &qr, &qdr, &gains).unwrap();
    let (m, bias) = bias_torque(&model, &q, &qd).unwrap();
    let ff = m * ((&qr - &q) * 200.0 + (&qdr - &qd) * 10.0) + bias;
    assert_relative_eq!(tau, ff, epsilon = 1e-10);
}

#[test]
fn gravity_compensation_fixed_point() {
    let model = panda_like();
    let q = panda_q();
    let zero = DVector::zeros(7);
    let tau = tracking_torque(&model, &q, &zero, &q, &zero, &paper_gains(7)).unwrap();
    let g = dynamics_terms(&model, &q, &zero).unwrap().g;
    assert_eq!(tau, g);
}

#[test]
fn closed_loop_step_converges() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let gains = paper_gains(2);
    let target = dv(&[0.8, -0.5]);
    let zero = DVector::zeros(2);
    let (mut q, mut qd) = (dv(&[0.0, 0.0]), dv(&[0.0, 0.0]));
    for _ in 0..2000 {
        let tau = tracking_torque(&model, &q, &qd, &target, &zero, &gains).unwrap();
        (q, qd) = rk4_step(&model, &q, &qd, &tau, &zero, DT).unwrap();
    }
    assert!((&q - &target).amax() < 1e-4, "{q}");
}

#[test]
fn observer_starts_at_zero() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let mut usde = UsdeState::new(2, 0.2).unwrap();
    let r = usde_update(&mut usde, &model, &dv(&[0.3, 0.2]), &dv(&[1.0, -2.0]), &dv(&[5.0, 1.0]), DT).unwrap();
    assert_eq!(r, DVector::zeros(2));
    assert!(usde.initialized);
}

#[test]
fn observer_is_quiet_without_external_torque() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let reference = |t: f64| {
        let w = 3.0;
        (dv(&[0.8 * (w * t).sin(), -0.6 * (w * t).cos()]), dv(&[0.8 * w * (w * t).cos(), 0.6 * w * (w * t).sin()]))
    };
    let est = observe(&model, 0.2, 3.0, dv(&[0.0, -0.6]), reference, |_, _| DVector::zeros(2));
    let settle = (5.0 * 0.2 / DT) as usize;
    let worst = est[settle..].iter().map(|r| r.norm()).fold(0.0, f64::max);
    assert!(worst < 0.05, "max ‖r̂‖ = {worst}");
}

#[test]
fn observer_step_response_tracks_external_torque() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let q0 = dv(&[0.2, 0.4]);
    let hold = q0.clone();
    let est = observe(&model, 0.2, 1.0, q0, move |_| (hold.clone(), DVector::zeros(2)), |_, _| dv(&[2.0, 0.0]));
    let last = est.last().unwrap();
    assert!((last[0] - 2.0).abs() < 0.04 && last[1].abs() < 0.04, "{last}");
}

#[test]
fn halving_filter_constant_halves_lag() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let rise = |k: f64| {
        let hold = dv(&[0.2, 0.4]);
        let est = observe(&model, k, 1.0, hold.clone(), move |_| (hold.clone(), DVector::zeros(2)), |_, _| dv(&[2.0, 0.0]));
        let target = 2.0 * (1.0 - (-1.0f64).exp());
        est.iter().position(|r| r[0] >= target).unwrap() as f64 * DT
    };
    let (slow, fast) = (rise(0.2), rise(0.1));
    assert!((slow - 0.2).abs() < 0.01, "{slow}");
    assert!((slow / fast - 2.0).abs() < 0.1, "{slow} {fast}");
}

#[test]
fn below_threshold_detects_nothing() {
    let model = panda_like();
    let r = DVector::from_element(7, 0.5);
    assert!(detect_contact(&r, &model, &panda_q(), 3.0, 0.0).unwrap().is_none());
}

#[test]
fn single_exceedance_identifies_its_link() {
    let model = panda_like();
    let mut r = DVector::zeros(7);
    r[4] = 4.0;
    r[1] = 1.0;
    let c = detect_contact(&r, &model, &panda_q(), 3.0, 1.5).unwrap().unwrap();
    assert_eq!(c.link_index, 4);
    assert_relative_eq!(c.n_c.norm(), 1.0, epsilon = 1e-12);
    assert_eq!(c.detected_at, 1.5);
}

#[test]
fn furthest_exceedance_wins() {
    let model = panda_like();
    let mut r = DVector::zeros(7);
    r[2] = -6.0;
    r[5] = 3.5;
    assert_eq!(exceeding_joint(&r, 3.0), Some(5));
    let c = detect_contact(&r, &model, &panda_q(), 3.0, 0.0).unwrap().unwrap();
    assert_eq!(c.link_index, 5);
}

#[test]
fn simulated_push_on_link_five_is_localized() {
    let model = panda_like();
    let q0 = panda_q();
    let hold = q0.clone();
    let link = 5;
    let est = observe(&model, 0.2, 0.6, q0, move |_| (hold.clone(), DVector::zeros(7)), |t, q| {
        if t < 0.1 {
            return DVector::zeros(7);
        }
        let poses = forward_kinematics(&model, q).unwrap();
        let p = poses[link].transform_point(&Vector3::new(0.088, 0.0, 0.0));
        let axis = poses[link].rotation * Vector3::z();
        let f = axis.cross(&(p - poses[link].translation)).normalize() * 60.0;
        let jp = point_jacobian(&model, &poses, link, &p).unwrap();
        jp.transpose() * dv(&[f.x, f.y, f.z + 5.0])
    });
    assert_eq!(exceeding_joint(est.last().unwrap(), 3.0), Some(link));
}

#[test]
fn reduced_jacobian_projects_contact_velocity() {
    let model = panda_like();
    let q = panda_q();
    let qd = dv(&[0.3, -0.2, 0.5, 0.1, -0.4, 0.2, 0.6]);
    let mut r = DVector::zeros(7);
    r[3] = 5.0;
    r[2] = -2.0;
    let (n_c, reduced) = reduced_contact_jacobian(&model, &q, 3, &r).unwrap();
    let h = 1e-6;
    let point = |q: &DVector<f64>| contact_point(&model, &forward_kinematics(&model, q).unwrap(), 3);
    let vel = (point(&(&q + &qd * h)) - point(&(&q - &qd * h))) / (2.0 * h);
    assert_relative_eq!(reduced.dot(&qd), n_c.dot(&vel), epsilon = 1e-7);
}

#[test]
fn undefined_direction_is_an_error() {
    // A torque in the null space of J_c has no Cartesian preimage at the contact point.
    let model = panda_like();
    let q = panda_q();
    let poses = forward_kinematics(&model, &q).unwrap();
    let jc = point_jacobian(&model, &poses, 3, &contact_point(&model, &poses, 3)).unwrap();
    // Null vector of the four nonzero columns by signed 3×3 minors.
    let cols = jc.columns(0, 4).into_owned();
    let mut r = DVector::zeros(7);
    for i in 0..4 {
        let keep: Vec<usize> = (0..4).filter(|&c| c != i).collect();
        let minor = cols.select_columns(keep.iter()).fixed_view::<3, 3>(0, 0).determinant();
        r[i] = if i % 2 == 0 { minor } else { -minor };
    }
    let r = &r * (6.0 / r.norm());
    let err = reduced_contact_jacobian(&model, &q, 3, &r).unwrap_err();
    assert!(matches!(err, Error::DegenerateContactDirection));
}

#[test]
fn planar_push_direction_is_recovered() {
    let model = planar_2r(1.0, 1.0, 1.0, 1.0);
    let q0 = dv(&[0.0, 0.5]);
    let hold = q0.clone();
    let est = observe(&model, 0.2, 0.8, q0, move |_| (hold.clone(), DVector::zeros(2)), |_, q| {
        let poses = forward_kinematics(&model, q).unwrap();
        let p = poses[0].transform_point(&Vector3::new(0.5, 0.0, 0.0));
        point_jacobian(&model, &poses, 0, &p).unwrap().transpose() * dv(&[0.0, -10.0, 0.0])
    });
    let (n_c, _) = reduced_contact_jacobian(&model, &dv(&[0.0, 0.5]), 0, est.last().unwrap()).unwrap();
    let angle = n_c.dot(&Vector3::new(0.0, -1.0, 0.0)).clamp(-1.0, 1.0).acos();
    assert!(angle < 5f64.to_radians(), "{n_c}");
}

fn fake_contact(model: &RobotModel, q: &DVector<f64>, link: usize) -> ContactInfo {
    let mut r = DVector::zeros(model.dof());
    r[link] = 5.0;
    detect_contact(&r, model, q, 3.0, 0.0).unwrap().unwrap()
}

#[test]
fn contact_law_at_rest_on_target_is_bias_compensation() {
    let model = panda_like();
    let q = panda_q();
    let qd = dv(&[0.1, 0.2, -0.1, 0.3, 0.0, -0.2, 0.1]);
    let t_des = forward_kinematics(&model, &q).unwrap()[7];
    let v_des = Twist(nalgebra::Vector6::from_column_slice((geometric_jacobian(&model, &q, Frame::EndEffector).unwrap() * &qd).as_slice()));
    let contact = fake_contact(&model, &q, 3);
    let zero = DVector::zeros(7);
    let tau = contact_safe_torque(&model, &q, &qd, &t_des, &v_des, &contact, &zero, &paper_gains(7), 0.0, &NullSpaceShaping::none(7)).unwrap();
    let task = task_dynamics(&model, &q, &qd).unwrap();
    assert_relative_eq!(tau, task.jacobian.transpose() * task.eta, epsilon = 1e-9);
}

#[test]
fn reaction_term_stays_in_task_null_space() {
    let model = panda_like();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let lo = model.lower_position_limits();
    let hi = model.upper_position_limits();
    for _ in 0..50 {
        let q = DVector::from_fn(7, |i, _| rng.random_range(lo[i] * 0.8..hi[i] * 0.8));
        let link = rng.random_range(2..7);
        let mut r = DVector::from_fn(7, |_, _| rng.random_range(-1.0..1.0));
        r[link] = 6.0;
        let Ok((_, reduced)) = reduced_contact_jacobian(&model, &q, link, &r) else { continue };
        let j = geometric_jacobian(&model, &q, Frame::EndEffector).unwrap();
        let pinv = pseudo_inverse_auto(&j);
        let projector = DMatrix::identity(7, 7) - &pinv * &j;
        let reaction = &projector * reduced * 12.0;
        assert!((pinv.transpose() * &reaction).norm() < 1e-8);
        // Quasi-static: joint motion along the reaction torque leaves the end effector still.
        assert!((&j * &reaction).norm() < 1e-6);
    }
}

#[test]
fn contact_law_cancels_estimated_task_disturbance() {
    let model = panda_like();
    let q = panda_q();
    let zero = DVector::zeros(7);
    let t_des = forward_kinematics(&model, &q).unwrap()[7];
    let contact = fake_contact(&model, &q, 5);
    let r = dv(&[0.0, 1.0, 0.0, 2.0, 5.0, 0.0, 0.0]);
    let shaping = NullSpaceShaping::none(7);
    let base = contact_safe_torque(&model, &q, &zero, &t_des, &Twist::zeros(), &contact, &zero, &paper_gains(7), 0.0, &shaping).unwrap();
    let with = contact_safe_torque(&model, &q, &zero, &t_des, &Twist::zeros(), &contact, &r, &paper_gains(7), 0.0, &shaping).unwrap();
    let task = task_dynamics(&model, &q, &zero).unwrap();
    let expected = -(task.jacobian.transpose() * task.jacobian_pinv.transpose() * &r);
    assert_relative_eq!(with - base, expected, epsilon = 1e-9);
}

/// Panda held at a fixed configuration under the mode machine; `push(t)` gives the
/// external force on link 4. In the returning phases the reference is the stored
/// pre-contact configuration.
fn mode_trace<F: Fn(f64, &[Mode]) -> f64>(seconds: f64, push: F) -> Vec<(f64, Mode)> {
    let model = panda_like();
    let mut ctrl = ControllerState::new(settings(7), 7).unwrap();
    let (mut q, mut qd) = (panda_q(), DVector::zeros(7));
    let task = JointReference::hold(&q);
    let mut trace = vec![(0.0, Mode::Tracking)];
    let steps = (seconds / DT).round() as usize;
    for i in 0..steps {
        let t = i as f64 * DT;
        let reference =
            if ctrl.mode == Mode::Tracking { task.clone() } else { JointReference::hold(&ctrl.q_pre_contact) };
        let out = ctrl.mode_step(&model, &TickInput { time: t, q: &q, qd: &qd, reference: &reference }).unwrap();
        if let Some((_, to)) = out.transition {
            trace.push((t, to));
        }
        let modes: Vec<Mode> = trace.iter().map(|(_, m)| *m).collect();
        let f = push(t, &modes);
        let poses = forward_kinematics(&model, &q).unwrap();
        let p = poses[4].transform_point(&Vector3::new(0.0, 0.0, 0.0));
        let ext = point_jacobian(&model, &poses, 4, &p).unwrap().transpose() * dv(&[0.0, f, 0.0]);
        (q, qd) = rk4_step(&model, &q, &qd, &out.torque, &ext, DT).unwrap();
    }
    trace
}

#[test]
fn no_contact_keeps_tracking() {
    let trace = mode_trace(1.0, |_, _| 0.0);
    assert_eq!(trace, vec![(0.0, Mode::Tracking)]);
}

#[test]
fn push_and_release_cycle_through_modes() {
    let trace = mode_trace(6.0, |t, _| if (0.5..2.5).contains(&t) { 40.0 } else { 0.0 });
    let modes: Vec<Mode> = trace.iter().map(|(_, m)| *m).collect();
    assert_eq!(
        modes,
        vec![Mode::Tracking, Mode::ContactSafe, Mode::Returning, Mode::ResumeCheck, Mode::Tracking],
        "{trace:?}"
    );
    assert!(trace[1].0 > 0.5 && trace[1].0 < 0.7, "{trace:?}");
}

#[test]
fn second_push_while_returning_reenters_contact_mode() {
    let trace = mode_trace(6.0, |t, modes| {
        let returning = modes.last() == Some(&Mode::Returning) || modes.len() > 3;
        if (0.5..1.5).contains(&t) || (returning && modes.len() <= 4 && t > 1.5) {
            40.0
        } else {
            0.0
        }
    });
    let modes: Vec<Mode> = trace.iter().map(|(_, m)| *m).collect();
    assert!(modes.len() >= 4, "{trace:?}");
    assert_eq!(&modes[..4], &[Mode::Tracking, Mode::ContactSafe, Mode::Returning, Mode::ContactSafe], "{trace:?}");
}

#[test]
fn config_rejects_bad_fields() {
    let cfg = ControllerConfig { release_fraction: 1.5, ..Default::default() };
    let err = cfg.resolve(7, DT).unwrap_err().to_string();
    assert!(err.contains("controller.release_fraction"), "{err}");
    let cfg: ControllerConfig = toml::from_str("kp1 = [1, 2]").unwrap();
    let err = cfg.resolve(7, DT).unwrap_err().to_string();
    assert!(err.contains("controller.kp1"), "{err}");
}
