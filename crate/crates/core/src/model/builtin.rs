//! Reference models used by tests, the validation suite and the bundled scenarios.

use std::f64::consts::FRAC_PI_2;

use nalgebra::{Matrix3, Vector3};

use super::{CollisionBody, Joint, JointLimits, Link, Pose, RobotModel};
use crate::geometry::Shape;

fn point_mass(mass: f64, at: Vector3<f64>) -> Link {
    Link { mass, com: at, inertia: Matrix3::zeros() }
}

fn planar(lengths: &[f64], masses: &[f64], name: &str) -> RobotModel {
    let mut joints = Vec::new();
    let mut links = Vec::new();
    let mut bodies = Vec::new();
    let mut prev = 0.0;
    for (i, (&l, &m)) in lengths.iter().zip(masses).enumerate() {
        joints.push(Joint {
            name: format!("joint{}", i + 1),
            origin: Pose::from_translation(Vector3::new(prev, 0.0, 0.0)),
            axis: Vector3::z(),
        });
        links.push(point_mass(m, Vector3::new(l, 0.0, 0.0)));
        bodies.push(CollisionBody {
            link: i,
            shape: Shape::Capsule { radius: 0.05, a: Vector3::zeros(), b: Vector3::new(l, 0.0, 0.0) },
            origin: Pose::identity(),
        });
        prev = l;
    }
    let limits = vec![
        JointLimits { position: (-3.0, 3.0), velocity: 3.0, acceleration: 20.0 };
        lengths.len()
    ];
    RobotModel::new(
        name,
        joints,
        links,
        Pose::from_translation(Vector3::new(prev, 0.0, 0.0)),
        bodies,
        Vector3::new(0.0, -9.81, 0.0),
        limits,
    )
    .expect("planar model is valid")
}

/// Planar 2R arm in the xy-plane with point masses at the link tips and gravity along −y.
pub fn planar_2r(l1: f64, l2: f64, m1: f64, m2: f64) -> RobotModel {
    planar(&[l1, l2], &[m1, m2], "planar_2r")
}

/// Planar 3R arm, 0.5 m links, 1 kg tip masses.
pub fn planar_3r() -> RobotModel {
    planar(&[0.5, 0.5, 0.5], &[1.0, 1.0, 1.0], "planar_3r")
}

/// Seven-joint spatial arm with the joint layout of a Franka Panda (modified DH) and
/// approximate inertial parameters. One capsule per link.
pub fn panda_like() -> RobotModel {
    // (alpha, a, d) per joint, modified DH
    let dh: [(f64, f64, f64); 7] = [
        (0.0, 0.0, 0.333),
        (-FRAC_PI_2, 0.0, 0.0),
        (FRAC_PI_2, 0.0, 0.316),
        (FRAC_PI_2, 0.0825, 0.0),
        (-FRAC_PI_2, -0.0825, 0.384),
        (FRAC_PI_2, 0.0, 0.0),
        (FRAC_PI_2, 0.088, 0.0),
    ];
    let masses = [4.97, 0.65, 3.23, 3.59, 1.23, 1.67, 1.47];
    let coms = [
        Vector3::new(0.0039, 0.0021, -0.0476),
        Vector3::new(-0.0031, -0.0287, 0.0035),
        Vector3::new(0.0275, 0.0393, -0.0665),
        Vector3::new(-0.0532, 0.1044, 0.0275),
        Vector3::new(-0.0120, 0.0411, -0.0384),
        Vector3::new(0.0601, -0.0141, -0.0105),
        Vector3::new(0.0105, -0.0043, 0.0800),
    ];
    let inertia = [
        [0.0703, 0.0706, 0.0091],
        [0.0080, 0.0028, 0.0080],
        [0.0372, 0.0361, 0.0108],
        [0.0259, 0.0196, 0.0283],
        [0.0355, 0.0294, 0.0086],
        [0.0020, 0.0043, 0.0054],
        [0.0120, 0.0100, 0.0050],
    ];
    let position = [
        (-2.8973, 2.8973),
        (-1.7628, 1.7628),
        (-2.8973, 2.8973),
        (-3.0718, -0.0698),
        (-2.8973, 2.8973),
        (-0.0175, 3.7525),
        (-2.8973, 2.8973),
    ];
    let velocity = [2.175, 2.175, 2.175, 2.175, 2.61, 2.61, 2.61];
    let acceleration = [15.0, 7.5, 10.0, 12.5, 15.0, 20.0, 20.0];

    let joints: Vec<Joint> = dh
        .iter()
        .enumerate()
        .map(|(i, &(alpha, a, d))| Joint {
            name: format!("joint{}", i + 1),
            origin: Pose::rot_x(alpha) * Pose::from_translation(Vector3::new(a, 0.0, d)),
            axis: Vector3::z(),
        })
        .collect();
    let links = (0..7)
        .map(|i| Link {
            mass: masses[i],
            com: coms[i],
            inertia: Matrix3::from_diagonal(&Vector3::from(inertia[i])),
        })
        .collect();
    let ee_frame = Pose::from_translation(Vector3::new(0.0, 0.0, 0.2104)) * Pose::rot_z(-std::f64::consts::FRAC_PI_4);

    // capsule endpoints in each joint frame
    let segments: [(Vector3<f64>, Vector3<f64>, f64); 7] = [
        (Vector3::new(0.0, 0.0, -0.19), Vector3::zeros(), 0.07),
        (Vector3::zeros(), Vector3::new(0.0, -0.316, 0.0), 0.07),
        (Vector3::zeros(), Vector3::new(0.0825, 0.0, 0.0), 0.06),
        (Vector3::zeros(), Vector3::new(-0.0825, 0.384, 0.0), 0.06),
        (Vector3::new(0.0, 0.0, -0.12), Vector3::zeros(), 0.05),
        (Vector3::zeros(), Vector3::new(0.088, 0.0, 0.0), 0.05),
        (Vector3::zeros(), Vector3::new(0.0, 0.0, 0.2104), 0.05),
    ];
    let bodies = segments
        .iter()
        .enumerate()
        .map(|(i, &(a, b, radius))| CollisionBody { link: i, shape: Shape::Capsule { radius, a, b }, origin: Pose::identity() })
        .collect();
    let limits = (0..7)
        .map(|i| JointLimits { position: position[i], velocity: velocity[i], acceleration: acceleration[i] })
        .collect();
    RobotModel::new("panda_like", joints, links, ee_frame, bodies, Vector3::new(0.0, 0.0, -9.81), limits)
        .expect("panda-like model is valid")
}
