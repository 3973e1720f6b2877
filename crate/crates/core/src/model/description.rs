//! Robot description files (TOML).
//!
//! ```toml
//! name = "planar_2r"
//! gravity = [0.0, -9.81, 0.0]
//!
//! [end_effector]            # relative to the last joint frame
//! xyz = [1.0, 0.0, 0.0]
//! rpy = [0.0, 0.0, 0.0]
//!
//! [[joint]]                 # one table per joint, base to tip
//! name = "joint1"
//! xyz = [0.0, 0.0, 0.0]     # origin relative to the previous joint frame
//! rpy = [0.0, 0.0, 0.0]     # fixed-axis roll, pitch, yaw (rad)
//! axis = [0.0, 0.0, 1.0]
//! position_limits = [-3.0, 3.0]
//! velocity_limit = 3.0
//! acceleration_limit = 20.0
//! mass = 1.0                # link attached to this joint
//! com = [1.0, 0.0, 0.0]     # joint frame
//! inertia = [0.0, 0.0, 0.0, 0.0, 0.0, 0.0]   # ixx iyy izz ixy ixz iyz about the COM
//!
//! [[collision]]
//! link = 0
//! shape = "capsule"         # sphere | capsule | box
//! radius = 0.05
//! a = [0.0, 0.0, 0.0]
//! b = [1.0, 0.0, 0.0]
//! xyz = [0.0, 0.0, 0.0]     # optional placement in the joint frame
//! rpy = [0.0, 0.0, 0.0]
//! ```
//!
//! Boxes are decomposed into capsules when the file is loaded.

use std::path::Path;

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};

use super::{CollisionBody, Joint, JointLimits, Link, Pose, RobotModel};
use crate::error::{Error, Result};
use crate::geometry::ShapeSpec;

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OriginSpec {
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
}

impl OriginSpec {
    pub fn pose(&self) -> Pose {
        Pose::from_rpy(Vector3::from(self.xyz), Vector3::from(self.rpy))
    }

    pub fn from_pose(p: &Pose) -> Self {
        let (r, pi, y) = Rotation3::from_matrix_unchecked(p.rotation).euler_angles();
        Self { xyz: p.translation.into(), rpy: [r, pi, y] }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointSpec {
    pub name: String,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    pub axis: [f64; 3],
    pub position_limits: [f64; 2],
    pub velocity_limit: f64,
    pub acceleration_limit: f64,
    pub mass: f64,
    pub com: [f64; 3],
    pub inertia: [f64; 6],
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CollisionSpec {
    pub link: usize,
    #[serde(default)]
    pub xyz: [f64; 3],
    #[serde(default)]
    pub rpy: [f64; 3],
    #[serde(flatten)]
    pub shape: ShapeSpec,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    pub name: String,
    pub gravity: [f64; 3],
    #[serde(default)]
    pub end_effector: OriginSpec,
    #[serde(rename = "joint")]
    pub joints: Vec<JointSpec>,
    #[serde(default, rename = "collision")]
    pub collisions: Vec<CollisionSpec>,
}

impl RobotSpec {
    pub fn build(&self) -> Result<RobotModel> {
        let mut joints = Vec::new();
        let mut links = Vec::new();
        let mut limits = Vec::new();
        for (i, j) in self.joints.iter().enumerate() {
            let axis = Vector3::from(j.axis);
            if axis.norm() < 1e-12 {
                return Err(Error::config(format!("joint[{i}].axis"), "axis must be nonzero"));
            }
            joints.push(Joint {
                name: j.name.clone(),
                origin: OriginSpec { xyz: j.xyz, rpy: j.rpy }.pose(),
                axis: axis.normalize(),
            });
            let [ixx, iyy, izz, ixy, ixz, iyz] = j.inertia;
            links.push(Link {
                mass: j.mass,
                com: Vector3::from(j.com),
                inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
            });
            limits.push(JointLimits {
                position: (j.position_limits[0], j.position_limits[1]),
                velocity: j.velocity_limit,
                acceleration: j.acceleration_limit,
            });
        }
        let mut bodies = Vec::new();
        for (i, c) in self.collisions.iter().enumerate() {
            let origin = OriginSpec { xyz: c.xyz, rpy: c.rpy }.pose();
            let shapes = c.shape.to_shapes().map_err(|e| Error::config(format!("collision[{i}]"), e.to_string()))?;
            for shape in shapes {
                bodies.push(CollisionBody { link: c.link, shape, origin });
            }
        }
        RobotModel::new(
            self.name.clone(),
            joints,
            links,
            self.end_effector.pose(),
            bodies,
            Vector3::from(self.gravity),
            limits,
        )
    }

    pub fn from_model(model: &RobotModel) -> Self {
        let joints = model
            .joints
            .iter()
            .zip(&model.links)
            .zip(&model.joint_limits)
            .map(|((j, l), lim)| {
                let o = OriginSpec::from_pose(&j.origin);
                let i = &l.inertia;
                JointSpec {
                    name: j.name.clone(),
                    xyz: o.xyz,
                    rpy: o.rpy,
                    axis: j.axis.into(),
                    position_limits: [lim.position.0, lim.position.1],
                    velocity_limit: lim.velocity,
                    acceleration_limit: lim.acceleration,
                    mass: l.mass,
                    com: l.com.into(),
                    inertia: [i[(0, 0)], i[(1, 1)], i[(2, 2)], i[(0, 1)], i[(0, 2)], i[(1, 2)]],
                }
            })
            .collect();
        let collisions = model
            .collision_bodies
            .iter()
            .map(|b| {
                let o = OriginSpec::from_pose(&b.origin);
                CollisionSpec { link: b.link, xyz: o.xyz, rpy: o.rpy, shape: ShapeSpec::from_shape(&b.shape) }
            })
            .collect();
        Self {
            name: model.name.clone(),
            gravity: model.gravity.into(),
            end_effector: OriginSpec::from_pose(&model.ee_frame),
            joints,
            collisions,
        }
    }
}

impl RobotModel {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let spec: RobotSpec = toml::from_str(text).map_err(|e| Error::config("robot description", e.to_string()))?;
        spec.build()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })?;
        let spec: RobotSpec =
            toml::from_str(&text).map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        spec.build()
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(&RobotSpec::from_model(self)).expect("robot spec serializes")
    }
}
