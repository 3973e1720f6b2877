//! Rigid transforms and 6-vector spatial quantities.
//!
//! Every 6-vector in this crate is stacked **angular first**: `[ωx, ωy, ωz, vx, vy, vz]`
//! for twists and `[mx, my, mz, fx, fy, fz]` for wrenches.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3, Vector6};
use serde::{Deserialize, Serialize};

/// Skew-symmetric cross-product matrix, `skew(a) * b == a.cross(&b)`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Element of SE(3).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self { rotation: Matrix3::identity(), translation: t }
    }

    pub fn from_rotation(r: Matrix3<f64>) -> Self {
        Self { rotation: r, translation: Vector3::zeros() }
    }

    /// Rotation of `angle` radians about a unit `axis`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        Self::from_rotation(axis_angle_matrix(axis, angle))
    }

    pub fn rot_x(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::x(), angle)
    }

    pub fn rot_z(angle: f64) -> Self {
        Self::from_axis_angle(&Vector3::z(), angle)
    }

    /// Roll-pitch-yaw (fixed X, then Y, then Z).
    pub fn from_rpy(translation: Vector3<f64>, rpy: Vector3<f64>) -> Self {
        let r = Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z);
        Self { rotation: *r.matrix(), translation }
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p + self.translation
    }

    pub fn transform_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    /// `self ⊖ other = log(self⁻¹ · other)`, expressed in the frame of `self`.
    pub fn minus(&self, other: &Pose) -> Twist {
        (self.inverse() * *other).log()
    }

    /// Matrix logarithm mapped to a twist. Principal branch: rotation angle in `[0, π]`.
    pub fn log(&self) -> Twist {
        let omega = so3_log(&self.rotation);
        let theta = omega.norm();
        let w = skew(&omega);
        let coeff = if theta < 1e-6 {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            (1.0 - theta * theta.sin() / (2.0 * (1.0 - theta.cos()))) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - 0.5 * w + coeff * w * w;
        Twist::from_parts(omega, v_inv * self.translation)
    }

    /// Exponential of a twist (inverse of [`Pose::log`]).
    pub fn exp(twist: &Twist) -> Pose {
        let omega = twist.angular();
        let theta = omega.norm();
        let w = skew(&omega);
        let (a, b) = if theta < 1e-6 {
            (0.5 - theta * theta / 24.0, 1.0 / 6.0 - theta * theta / 120.0)
        } else {
            ((1.0 - theta.cos()) / (theta * theta), (theta - theta.sin()) / (theta * theta * theta))
        };
        let rot = so3_exp(&omega);
        let v = Matrix3::identity() + a * w + b * w * w;
        Pose { rotation: rot, translation: v * twist.linear() }
    }

    /// `RᵀR = I` and `det R = +1` within `tol`.
    pub fn is_valid(&self, tol: f64) -> bool {
        let err = (self.rotation.transpose() * self.rotation - Matrix3::identity()).abs().max();
        err <= tol && (self.rotation.determinant() - 1.0).abs() <= tol
    }

    /// Position-linear, rotation-geodesic interpolation; `s ∈ [0, 1]`.
    pub fn interpolate(&self, other: &Pose, s: f64) -> Pose {
        let rel = so3_log(&(self.rotation.transpose() * other.rotation));
        Pose {
            rotation: self.rotation * so3_exp(&(rel * s)),
            translation: self.translation + (other.translation - self.translation) * s,
        }
    }
}

impl Mul for Pose {
    type Output = Pose;
    fn mul(self, rhs: Pose) -> Pose {
        Pose {
            rotation: self.rotation * rhs.rotation,
            translation: self.rotation * rhs.translation + self.translation,
        }
    }
}

pub fn axis_angle_matrix(axis: &Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let r = Rotation3::from_axis_angle(&Unit::new_normalize(*axis), angle);
    *r.matrix()
}

pub fn so3_exp(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta = omega.norm();
    if theta < 1e-12 {
        return Matrix3::identity() + skew(omega);
    }
    axis_angle_matrix(&(omega / theta), theta)
}

/// Rotation vector of `r`. At an angle of exactly π the axis sign is chosen so
/// that its largest component is positive.
pub fn so3_log(r: &Matrix3<f64>) -> Vector3<f64> {
    let cos_theta = (r.trace() - 1.0) * 0.5;
    let sin_theta = vee(&(r - r.transpose())).norm() * 0.5;
    let theta = sin_theta.atan2(cos_theta);
    if theta < 1e-9 {
        return vee(&(r - r.transpose())) * 0.5;
    }
    if PI - theta < 1e-6 {
        // R ≈ 2aaᵀ − I near π
        let b = (r + Matrix3::identity()) * 0.5;
        let mut k = 0;
        for i in 1..3 {
            if b[(i, i)] > b[(k, k)] {
                k = i;
            }
        }
        let mut axis = b.column(k).into_owned() / b[(k, k)].max(1e-300).sqrt();
        axis.normalize_mut();
        // pick the branch consistent with the antisymmetric part, if any
        let s = vee(&(r - r.transpose()));
        if s.dot(&axis) < 0.0 {
            axis = -axis;
        }
        return axis * theta;
    }
    vee(&(r - r.transpose())) * (theta / (2.0 * theta.sin()))
}

/// Spatial velocity, angular part first.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Twist(pub Vector6<f64>);

impl Twist {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn from_parts(angular: Vector3<f64>, linear: Vector3<f64>) -> Self {
        Self(Vector6::new(angular.x, angular.y, angular.z, linear.x, linear.y, linear.z))
    }

    pub fn angular(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn linear(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    /// Re-express both parts with the rotation `r` (no change of reference point).
    pub fn rotated(&self, r: &Matrix3<f64>) -> Twist {
        Twist::from_parts(r * self.angular(), r * self.linear())
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Spatial force, moment part first (dual of [`Twist`]).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wrench(pub Vector6<f64>);

impl Wrench {
    pub fn zeros() -> Self {
        Self(Vector6::zeros())
    }

    pub fn from_parts(moment: Vector3<f64>, force: Vector3<f64>) -> Self {
        Self(Vector6::new(moment.x, moment.y, moment.z, force.x, force.y, force.z))
    }

    pub fn moment(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(0).into_owned()
    }

    pub fn force(&self) -> Vector3<f64> {
        self.0.fixed_rows::<3>(3).into_owned()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Power against a twist in the same frame and stacking order.
    pub fn power(&self, twist: &Twist) -> f64 {
        self.0.dot(&twist.0)
    }
}
