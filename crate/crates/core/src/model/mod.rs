//! Serial-chain robot description, kinematics and rigid-body dynamics.

mod builtin;
pub mod description;
pub mod dynamics;
pub mod kinematics;
pub mod pose;
pub(crate) mod spatial;

use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Shape;

pub use builtin::{panda_like, planar_2r, planar_3r};
pub use dynamics::{
    bias_torque, dynamics_terms, forward_dynamics, inverse_dynamics, mass_matrix, rk4_step, task_dynamics, DynamicsTerms,
    TaskDynamicsTerms,
};
pub use kinematics::{
    forward_kinematics, geometric_jacobian, null_projector, null_projector_auto, point_jacobian, pseudo_inverse,
    pseudo_inverse_auto, Frame,
};
pub use pose::{Pose, Twist, Wrench};

/// Revolute joint. `origin` places the joint frame relative to the previous joint
/// frame (the world for joint 0); the joint rotates about `axis` in its own frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub origin: Pose,
    pub axis: Vector3<f64>,
}

/// Inertial parameters of the link rigidly attached to the joint of the same index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub mass: f64,
    /// Center of mass in the joint frame.
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass, joint-frame axes.
    pub inertia: Matrix3<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JointLimits {
    pub position: (f64, f64),
    pub velocity: f64,
    pub acceleration: f64,
}

impl Default for JointLimits {
    fn default() -> Self {
        Self { position: (-std::f64::consts::PI, std::f64::consts::PI), velocity: 2.0, acceleration: 10.0 }
    }
}

/// Collision primitive attached to a link; `origin` is relative to the link's joint frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionBody {
    pub link: usize,
    pub shape: Shape,
    pub origin: Pose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<Joint>,
    pub links: Vec<Link>,
    /// End-effector frame relative to the last joint frame.
    pub ee_frame: Pose,
    pub collision_bodies: Vec<CollisionBody>,
    pub gravity: Vector3<f64>,
    pub joint_limits: Vec<JointLimits>,
}

impl RobotModel {
    /// Builds a model and checks its invariants.
    pub fn new(
        name: impl Into<String>,
        joints: Vec<Joint>,
        links: Vec<Link>,
        ee_frame: Pose,
        collision_bodies: Vec<CollisionBody>,
        gravity: Vector3<f64>,
        joint_limits: Vec<JointLimits>,
    ) -> Result<Self> {
        let model = Self {
            name: name.into(),
            joints,
            links,
            ee_frame,
            collision_bodies,
            gravity,
            joint_limits,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n == 0 {
            return Err(Error::InvalidModel("chain needs at least one joint".into()));
        }
        if self.links.len() != n {
            return Err(Error::InvalidModel(format!("{} joints but {} links", n, self.links.len())));
        }
        if self.joint_limits.len() != n {
            return Err(Error::InvalidModel(format!(
                "{} joints but {} joint limit entries",
                n,
                self.joint_limits.len()
            )));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if (j.axis.norm() - 1.0).abs() > 1e-9 {
                return Err(Error::InvalidModel(format!("joint {i} axis is not a unit vector")));
            }
            if !j.origin.is_valid(1e-9) {
                return Err(Error::InvalidModel(format!("joint {i} origin rotation is not in SO(3)")));
            }
        }
        for (i, l) in self.links.iter().enumerate() {
            if !(l.mass > 0.0) {
                return Err(Error::InvalidModel(format!("link {i} mass must be positive")));
            }
            if (l.inertia - l.inertia.transpose()).abs().max() > 1e-12 {
                return Err(Error::InvalidModel(format!("link {i} inertia is not symmetric")));
            }
            let eig = l.inertia.symmetric_eigenvalues();
            if eig.iter().any(|&e| e < -1e-12) {
                return Err(Error::InvalidModel(format!("link {i} inertia is not positive semidefinite")));
            }
        }
        for (i, lim) in self.joint_limits.iter().enumerate() {
            if !(lim.position.0 < lim.position.1) || !(lim.velocity > 0.0) || !(lim.acceleration > 0.0) {
                return Err(Error::InvalidModel(format!("joint {i} limits are inconsistent")));
            }
        }
        for (i, body) in self.collision_bodies.iter().enumerate() {
            if body.link >= n {
                return Err(Error::InvalidModel(format!(
                    "collision body {i} references link {} of {n}",
                    body.link
                )));
            }
            body.shape.validate().map_err(|e| Error::InvalidModel(format!("collision body {i}: {e}")))?;
        }
        Ok(())
    }

    pub(crate) fn check_q(&self, what: &'static str, q: &DVector<f64>) -> Result<()> {
        if q.len() != self.dof() {
            return Err(Error::dim(what, self.dof(), q.len()));
        }
        Ok(())
    }

    pub fn lower_position_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joint_limits.iter().map(|l| l.position.0))
    }

    pub fn upper_position_limits(&self) -> DVector<f64> {
        DVector::from_iterator(self.dof(), self.joint_limits.iter().map(|l| l.position.1))
    }

    /// Same model with gravity switched off.
    pub fn without_gravity(&self) -> Self {
        let mut m = self.clone();
        m.gravity = Vector3::zeros();
        m
    }

    /// Potential energy `−Σ mᵢ gᵀ cᵢ` of the chain at `q`.
    pub fn potential_energy(&self, q: &DVector<f64>) -> Result<f64> {
        let poses = forward_kinematics(self, q)?;
        Ok(self
            .links
            .iter()
            .zip(poses.iter())
            .map(|(l, p)| -l.mass * self.gravity.dot(&p.transform_point(&l.com)))
            .sum())
    }
}
