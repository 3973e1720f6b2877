use std::path::Path;

use nalgebra::{DVector, Vector3};
use proptest::prelude::*;

use safe_manip::controller::exceeding_joint;
use safe_manip::geometry::{min_distance, Primitive};
use safe_manip::model::{
    forward_kinematics, geometric_jacobian, mass_matrix, null_projector, panda_like, Frame, Pose, Twist,
};
use safe_manip::planner::config::MpcConfig;
use safe_manip::planner::cost::relaxation_factor;
use safe_manip::sim::parse_scenario;

fn panda_q() -> impl Strategy<Value = DVector<f64>> {
    let m = panda_like();
    let (lo, hi) = (m.lower_position_limits(), m.upper_position_limits());
    let ranges: Vec<_> = (0..7).map(|i| (lo[i] + 0.05)..(hi[i] - 0.05)).collect();
    ranges.prop_map(DVector::from_vec)
}

fn vec3(r: f64) -> impl Strategy<Value = Vector3<f64>> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vector3::new(x, y, z))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn link_rotations_stay_orthonormal(q in panda_q()) {
        for pose in forward_kinematics(&panda_like(), &q).unwrap() {
            prop_assert!(pose.is_valid(1e-9));
        }
    }

    #[test]
    fn mass_matrix_is_symmetric_positive_definite(q in panda_q()) {
        let m = mass_matrix(&panda_like(), &q).unwrap();
        prop_assert!((&m - m.transpose()).amax() < 1e-10);
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn null_projector_is_idempotent_and_annihilates(q in panda_q()) {
        let j = geometric_jacobian(&panda_like(), &q, Frame::EndEffector).unwrap();
        let n = null_projector(&j).unwrap();
        prop_assert!((&n * &n - &n).amax() < 1e-8);
        prop_assert!((&j * &n).amax() < 1e-8);
    }

    #[test]
    fn relaxation_is_bounded_and_monotone(d1 in -0.05..0.3f64, d2 in -0.05..0.3f64) {
        let cfg = MpcConfig::default();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let (a, b) = (relaxation_factor(lo, &cfg), relaxation_factor(hi, &cfg));
        prop_assert!(a > 0.0 && b <= 1.0);
        prop_assert!(a <= b);
    }

    #[test]
    fn distance_is_symmetric_and_witnessed(
        a0 in vec3(1.0), a1 in vec3(1.0), c in vec3(1.0), ra in 0.01..0.2f64, rb in 0.01..0.2f64,
    ) {
        let cap = Primitive::capsule(a0, a1, ra);
        let ball = Primitive::sphere(c, rb);
        let ab = min_distance(&cap, &ball);
        let ba = min_distance(&ball, &cap);
        prop_assert!((ab.distance - ba.distance).abs() < 1e-9);
        if ab.distance > 1e-6 {
            prop_assert!(((ab.p_a - ab.p_b).norm() - ab.distance).abs() < 1e-9);
            prop_assert!((ab.normal.norm() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn pose_exp_inverts_log(w in vec3(3.0), v in vec3(2.0)) {
        let p = Pose::exp(&Twist::from_parts(w, v));
        let back = Pose::exp(&p.log());
        prop_assert!((back.rotation - p.rotation).amax() < 1e-8);
        prop_assert!((back.translation - p.translation).amax() < 1e-8);
    }

    #[test]
    fn identified_joint_exceeds_and_nothing_beyond_does(r in prop::collection::vec(-8.0..8.0f64, 7)) {
        let r = DVector::from_vec(r);
        match exceeding_joint(&r, 3.0) {
            Some(j) => {
                prop_assert!(r[j].abs() > 3.0);
                prop_assert!(r.iter().skip(j + 1).all(|v| v.abs() <= 3.0));
            }
            None => prop_assert!(r.amax() <= 3.0),
        }
    }

    #[test]
    fn waypoint_order_is_enforced(t1 in 0.1..5.0f64, t2 in 0.1..5.0f64) {
        let text = format!(
            "robot = \"builtin:planar_2r\"\nduration = 6.0\ninitial_q = [0.3, 0.6]\n\n\
             [[reference]]\nt = {t1}\nposition = [1.0, 1.0, 0.0]\n\n[[reference]]\nt = {t2}\nposition = [1.1, 0.9, 0.0]\n"
        );
        let parsed = parse_scenario(&text, Path::new("p.toml"), &[]);
        prop_assert_eq!(parsed.is_ok(), t2 >= t1);
    }
}
