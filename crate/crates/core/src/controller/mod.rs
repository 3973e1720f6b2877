//! Torque-level control at the servo rate: computed-torque tracking, a momentum-based
//! external-torque observer, contact localization and the contact-safe reaction law.

mod config;
mod modes;

pub use config::{ControllerConfig, ControllerSettings};
pub use modes::{ControllerState, JointReference, Mode, TickInput, TickOutput};

use nalgebra::{DMatrix, DVector, Vector3, Vector6};

use crate::error::{Error, Result};
use crate::model::dynamics::task_dynamics_from_terms;
use crate::model::pose::so3_log;
use crate::model::{dynamics_terms, forward_kinematics, point_jacobian, pseudo_inverse_auto, DynamicsTerms, Pose, RobotModel, Twist};

/// Threshold on `‖J̄_cᵀ r̂‖` below which the contact direction is undefined.
pub const DIRECTION_EPS: f64 = 1e-6;

/// Diagonal gains; joint-space vectors have `n` entries, task-space ones 6 (angular first).
#[derive(Clone, Debug, PartialEq)]
pub struct GainSet {
    pub kp1: DVector<f64>,
    pub kd1: DVector<f64>,
    pub kp2: DVector<f64>,
    pub kd2: DVector<f64>,
    pub kp3: Vector6<f64>,
    pub kd3: Vector6<f64>,
}

impl GainSet {
    pub fn uniform(n: usize, kp1: f64, kd1: f64, kp2: f64, kd2: f64, kp3: f64, kd3: f64) -> Self {
        Self {
            kp1: DVector::from_element(n, kp1),
            kd1: DVector::from_element(n, kd1),
            kp2: DVector::from_element(n, kp2),
            kd2: DVector::from_element(n, kd2),
            kp3: Vector6::from_element(kp3),
            kd3: Vector6::from_element(kd3),
        }
    }
}

/// Extra joint torques applied inside the end-effector null space while reacting to a contact.
#[derive(Clone, Debug, PartialEq)]
pub struct NullSpaceShaping {
    /// Diagonal damping on joint velocity.
    pub damping: DVector<f64>,
    /// Also cancel the part of `Cq̇ + g` that the task-space bias leaves uncompensated.
    pub compensate_bias: bool,
}

impl NullSpaceShaping {
    pub fn none(n: usize) -> Self {
        Self { damping: DVector::zeros(n), compensate_bias: false }
    }
}

/// `τ = M(K_p1 e + K_d1 ė) + Cq̇ + g + K_p2 e + K_d2 ė` with `e = q_des − q`.
pub fn tracking_torque(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_des: &DVector<f64>,
    qd_des: &DVector<f64>,
    gains: &GainSet,
) -> Result<DVector<f64>> {
    let (m, bias) = crate::model::bias_torque(model, q, qd)?;
    Ok(tracking_from_terms(&m, &bias, q, qd, q_des, qd_des, gains))
}

fn tracking_from_terms(
    m: &DMatrix<f64>,
    bias: &DVector<f64>,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    q_des: &DVector<f64>,
    qd_des: &DVector<f64>,
    gains: &GainSet,
) -> DVector<f64> {
    let e = q_des - q;
    let ed = qd_des - qd;
    let inner = gains.kp1.component_mul(&e) + gains.kd1.component_mul(&ed);
    m * inner + bias + gains.kp2.component_mul(&e) + gains.kd2.component_mul(&ed)
}

/// Filter states of the momentum observer.
#[derive(Clone, Debug, PartialEq)]
pub struct UsdeState {
    /// Filter time constant in seconds.
    pub k: f64,
    pub p_f: DVector<f64>,
    pub h_f: DVector<f64>,
    pub tau_f: DVector<f64>,
    p_prev: DVector<f64>,
    h_prev: DVector<f64>,
    pub initialized: bool,
}

impl UsdeState {
    pub fn new(n: usize, k: f64) -> Result<Self> {
        if !(k > 0.0 && k.is_finite()) {
            return Err(Error::config("controller.k_usde", "filter constant must be positive"));
        }
        let z = DVector::zeros(n);
        Ok(Self { k, p_f: z.clone(), h_f: z.clone(), tau_f: z.clone(), p_prev: z.clone(), h_prev: z, initialized: false })
    }

    pub fn reset(&mut self) {
        self.initialized = false;
    }

    fn current(&self, p: &DVector<f64>) -> DVector<f64> {
        (p - &self.p_f) / self.k + &self.h_f - &self.tau_f
    }

    /// Advances the filters given `P = Mq̇`, `H = −Cᵀq̇ + g` at this tick and the torque
    /// commanded over the interval that just ended.
    fn advance(&mut self, p: DVector<f64>, h: DVector<f64>, tau_cmd: &DVector<f64>, dt: f64) -> DVector<f64> {
        if !self.initialized {
            self.p_f = p.clone();
            self.h_f = h.clone();
            self.tau_f = h.clone();
            self.p_prev = p;
            self.h_prev = h;
            self.initialized = true;
            return DVector::zeros(self.p_f.len());
        }
        let a = dt / self.k;
        self.p_f += (&self.p_prev - &self.p_f) * a;
        self.h_f += (&self.h_prev - &self.h_f) * a;
        self.tau_f += (tau_cmd - &self.tau_f) * a;
        let r = self.current(&p);
        self.p_prev = p;
        self.h_prev = h;
        r
    }
}

fn observer_inputs(terms: &DynamicsTerms, qd: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let p = &terms.m * qd;
    let h = -(terms.c.transpose() * qd) + &terms.g;
    (p, h)
}

/// One observer tick; returns the external-torque estimate `r̂`.
pub fn usde_update(
    state: &mut UsdeState,
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau_cmd: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    model.check_q("commanded torques", tau_cmd)?;
    let terms = dynamics_terms(model, q, qd)?;
    usde_from_terms(state, &terms, qd, tau_cmd, dt)
}

fn usde_from_terms(
    state: &mut UsdeState,
    terms: &DynamicsTerms,
    qd: &DVector<f64>,
    tau_cmd: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>> {
    if !(dt > 0.0) {
        return Err(Error::config("controller.dt", "time step must be positive"));
    }
    let (p, h) = observer_inputs(terms, qd);
    Ok(state.advance(p, h, tau_cmd, dt))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContactInfo {
    /// Link driven by the identified joint.
    pub link_index: usize,
    pub r_hat: DVector<f64>,
    /// Unit contact direction in world coordinates.
    pub n_c: Vector3<f64>,
    /// Reduced contact Jacobian `n_cᵀ J_c` stored as an n-vector.
    pub reduced_jacobian: DVector<f64>,
    pub detected_at: f64,
}

/// Minimum lever arm (m) for a frame origin to serve as the contact point of a link.
pub const MIN_LEVER: f64 = 1e-3;

/// World position of the distal end of `link`: the first downstream frame origin (joint
/// origins, then the end effector) that lies off the link's own joint axis.
pub fn contact_point(model: &RobotModel, poses: &[Pose], link: usize) -> Vector3<f64> {
    let axis = poses[link].rotation * model.joints[link].axis;
    let origin = poses[link].translation;
    poses[link + 1..]
        .iter()
        .map(|p| p.translation)
        .find(|p| (p - origin).cross(&axis).norm() > MIN_LEVER)
        .unwrap_or(poses[link + 1].translation)
}

/// `(n_c, J̃_c)` for a contact on `link`, with `r̂` standing in for the true contact torque.
pub fn reduced_contact_jacobian(
    model: &RobotModel,
    q: &DVector<f64>,
    link: usize,
    r_hat: &DVector<f64>,
) -> Result<(Vector3<f64>, DVector<f64>)> {
    model.check_q("torque estimate", r_hat)?;
    let poses = forward_kinematics(model, q)?;
    if link >= model.dof() {
        return Err(Error::InvalidFrame { index: link, count: model.dof() });
    }
    let jc = point_jacobian(model, &poses, link, &contact_point(model, &poses, link))?;
    let f = pseudo_inverse_auto(&jc).transpose() * r_hat;
    let norm = f.norm();
    if !(norm > DIRECTION_EPS) {
        return Err(Error::DegenerateContactDirection);
    }
    let n_c = Vector3::new(f[0], f[1], f[2]) / norm;
    let reduced = jc.transpose() * DVector::from_column_slice(n_c.as_slice());
    Ok((n_c, reduced))
}

/// Highest joint whose estimate magnitude exceeds `tau_th`.
pub fn exceeding_joint(r_hat: &DVector<f64>, tau_th: f64) -> Option<usize> {
    r_hat.iter().rposition(|v| v.abs() > tau_th)
}

/// Localizes a contact from the torque estimate. `Ok(None)` means no joint exceeds the
/// threshold; an undefined direction is reported as [`Error::DegenerateContactDirection`].
pub fn detect_contact(
    r_hat: &DVector<f64>,
    model: &RobotModel,
    q: &DVector<f64>,
    tau_th: f64,
    time: f64,
) -> Result<Option<ContactInfo>> {
    let Some(link) = exceeding_joint(r_hat, tau_th) else {
        return Ok(None);
    };
    let (n_c, reduced_jacobian) = reduced_contact_jacobian(model, q, link, r_hat)?;
    Ok(Some(ContactInfo { link_index: link, r_hat: r_hat.clone(), n_c, reduced_jacobian, detected_at: time }))
}

/// Pose error `T ⊖ T_des` expressed like the end-effector Jacobian: world-aligned
/// rotation vector, then the position difference.
pub fn task_error(current: &Pose, desired: &Pose) -> Vector6<f64> {
    let w = current.rotation * so3_log(&(current.rotation.transpose() * desired.rotation));
    let p = desired.translation - current.translation;
    Vector6::new(w[0], w[1], w[2], p[0], p[1], p[2])
}

/// Joint torque that holds the end effector at `t_des` while the contacted link is driven
/// with force `f_des` along `n_c` inside the end-effector null space.
#[allow(clippy::too_many_arguments)]
pub fn contact_safe_torque(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    t_des: &Pose,
    v_des: &Twist,
    contact: &ContactInfo,
    r_hat: &DVector<f64>,
    gains: &GainSet,
    f_des: f64,
    shaping: &NullSpaceShaping,
) -> Result<DVector<f64>> {
    let terms = dynamics_terms(model, q, qd)?;
    contact_safe_from_terms(model, q, qd, &terms, t_des, v_des, contact, r_hat, gains, f_des, shaping)
}

#[allow(clippy::too_many_arguments)]
fn contact_safe_from_terms(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    terms: &DynamicsTerms,
    t_des: &Pose,
    v_des: &Twist,
    contact: &ContactInfo,
    r_hat: &DVector<f64>,
    gains: &GainSet,
    f_des: f64,
    shaping: &NullSpaceShaping,
) -> Result<DVector<f64>> {
    model.check_q("torque estimate", r_hat)?;
    model.check_q("reduced contact Jacobian", &contact.reduced_jacobian)?;
    let task = task_dynamics_from_terms(model, q, qd, terms)?;
    let poses = forward_kinematics(model, q)?;
    let ee = poses[model.dof()];
    let err = task_error(&ee, t_des);
    let v = DVector::from_column_slice((&task.jacobian * qd).as_slice());
    let dv = DVector::from_column_slice(v_des.0.as_slice()) - v;
    let kp = DVector::from_column_slice(gains.kp3.as_slice());
    let kd = DVector::from_column_slice(gains.kd3.as_slice());
    let accel = kp.component_mul(&DVector::from_column_slice(err.as_slice())) + kd.component_mul(&dv);
    let wrench = &task.lambda * accel + &task.eta - task.jacobian_pinv.transpose() * r_hat;
    let n = model.dof();
    let projector = DMatrix::identity(n, n) - &task.jacobian_pinv * &task.jacobian;
    let mut null = &contact.reduced_jacobian * f_des - shaping.damping.component_mul(qd);
    if shaping.compensate_bias {
        null += &terms.coriolis + &terms.g;
    }
    Ok(task.jacobian.transpose() * wrench + projector * null)
}

#[cfg(test)]
mod tests;
