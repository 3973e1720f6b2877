use std::fmt;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::{
    contact_point, contact_safe_from_terms, exceeding_joint, tracking_from_terms, usde_from_terms, ContactInfo,
    ControllerSettings, UsdeState, DIRECTION_EPS,
};
use crate::error::{Error, Result};
use crate::model::{dynamics_terms, forward_kinematics, point_jacobian, pseudo_inverse_auto, Pose, RobotModel, Twist};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    Tracking,
    ContactSafe,
    Returning,
    ResumeCheck,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Tracking => "TRACKING",
            Mode::ContactSafe => "CONTACT_SAFE",
            Mode::Returning => "RETURNING",
            Mode::ResumeCheck => "RESUME_CHECK",
        }
    }

    /// Whether the planner output is tracked with the joint-space law in this mode.
    pub fn tracks_joint_reference(self) -> bool {
        self != Mode::ContactSafe
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Desired joint state handed over by the planner.
#[derive(Clone, Debug, PartialEq)]
pub struct JointReference {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointReference {
    pub fn hold(q: &DVector<f64>) -> Self {
        Self { q: q.clone(), qd: DVector::zeros(q.len()) }
    }
}

pub struct TickInput<'a> {
    pub time: f64,
    pub q: &'a DVector<f64>,
    pub qd: &'a DVector<f64>,
    pub reference: &'a JointReference,
}

#[derive(Clone, Debug)]
pub struct TickOutput {
    pub mode: Mode,
    pub torque: DVector<f64>,
    pub r_hat: DVector<f64>,
    pub f_des: f64,
    pub contact_link: Option<usize>,
    pub transition: Option<(Mode, Mode)>,
}

/// Single-owner controller state advanced once per control tick.
#[derive(Clone, Debug)]
pub struct ControllerState {
    pub settings: ControllerSettings,
    pub mode: Mode,
    pub usde: UsdeState,
    pub contact: Option<ContactInfo>,
    pub q_pre_contact: DVector<f64>,
    /// End-effector pose held while reacting to a contact.
    pub hold_pose: Pose,
    pub f_des: f64,
    last_torque: DVector<f64>,
    since: Option<f64>,
}

impl ControllerState {
    pub fn new(settings: ControllerSettings, dof: usize) -> Result<Self> {
        let usde = UsdeState::new(dof, settings.k_usde)?;
        Ok(Self {
            settings,
            mode: Mode::Tracking,
            usde,
            contact: None,
            q_pre_contact: DVector::zeros(dof),
            hold_pose: Pose::identity(),
            f_des: 0.0,
            last_torque: DVector::zeros(dof),
            since: None,
        })
    }

    /// Torque applied over the interval that just ended.
    pub fn last_torque(&self) -> &DVector<f64> {
        &self.last_torque
    }

    fn enter(&mut self, mode: Mode, time: f64) {
        self.mode = mode;
        self.since = if mode == Mode::ResumeCheck { Some(time) } else { None };
    }

    /// Contact estimate on `link` from the current `r̂`, or `None` when the direction is undefined.
    fn localize(
        &self,
        model: &RobotModel,
        poses: &[Pose],
        link: usize,
        r_hat: &DVector<f64>,
        time: f64,
    ) -> Result<Option<(ContactInfo, f64)>> {
        let jc = point_jacobian(model, poses, link, &contact_point(model, poses, link))?;
        let f = pseudo_inverse_auto(&jc).transpose() * r_hat;
        let norm = f.norm();
        if !(norm > DIRECTION_EPS) {
            return Ok(None);
        }
        let n_c = Vector3::new(f[0], f[1], f[2]) / norm;
        let reduced_jacobian = jc.transpose() * DVector::from_column_slice(n_c.as_slice());
        let info = ContactInfo { link_index: link, r_hat: r_hat.clone(), n_c, reduced_jacobian, detected_at: time };
        Ok(Some((info, norm)))
    }

    /// One control tick: observer update, mode transition, then the torque of the active law.
    pub fn mode_step(&mut self, model: &RobotModel, input: &TickInput<'_>) -> Result<TickOutput> {
        let s = &self.settings;
        let (q, qd, t) = (input.q, input.qd, input.time);
        model.check_q("reference positions", &input.reference.q)?;
        model.check_q("reference velocities", &input.reference.qd)?;
        let terms = dynamics_terms(model, q, qd)?;
        let tau_prev = self.last_torque.clone();
        let r_hat = usde_from_terms(&mut self.usde, &terms, qd, &tau_prev, s.dt)?;
        let poses = forward_kinematics(model, q)?;
        let before = self.mode;
        let exceeding = exceeding_joint(&r_hat, s.tau_th);
        let (tau_th, release, dwell, tol) = (s.tau_th, s.release_fraction, s.dwell, s.resume_tolerance);

        let mut f_des = 0.0;
        match self.mode {
            Mode::Tracking => {
                if let Some(link) = exceeding {
                    match self.localize(model, &poses, link, &r_hat, t)? {
                        Some((info, _)) => {
                            self.q_pre_contact = q.clone();
                            let desired = forward_kinematics(model, &input.reference.q)?;
                            self.hold_pose = desired[model.dof()];
                            self.contact = Some(info);
                            self.enter(Mode::ContactSafe, t);
                        }
                        None => log::warn!("t={t:.3}: joint {link} exceeds threshold but contact direction is undefined"),
                    }
                }
            }
            Mode::ContactSafe => {
                if r_hat.amax() < release * tau_th {
                    let start = *self.since.get_or_insert(t);
                    if t - start >= dwell - 1e-12 {
                        self.enter(Mode::Returning, t);
                    }
                } else {
                    self.since = None;
                }
            }
            Mode::Returning | Mode::ResumeCheck => {
                let reentry = match exceeding {
                    Some(link) => self.localize(model, &poses, link, &r_hat, t)?,
                    None => None,
                };
                let deviation = (q - &self.q_pre_contact).amax();
                if let Some((info, _)) = reentry {
                    self.contact = Some(info);
                    self.enter(Mode::ContactSafe, t);
                } else if self.mode == Mode::Returning && deviation < tol {
                    self.enter(Mode::ResumeCheck, t);
                } else if self.mode == Mode::ResumeCheck {
                    if deviation >= tol {
                        self.enter(Mode::Returning, t);
                    } else if t - self.since.unwrap_or(t) >= dwell - 1e-12 {
                        self.contact = None;
                        self.enter(Mode::Tracking, t);
                    }
                }
            }
        }

        let torque = if self.mode == Mode::ContactSafe {
            let mut contact = self.contact.clone().ok_or(Error::DegenerateContactDirection)?;
            let link = exceeding.unwrap_or(contact.link_index);
            let magnitude = match self.localize(model, &poses, link, &r_hat, t)? {
                Some((info, norm)) => {
                    contact.link_index = info.link_index;
                    contact.n_c = info.n_c;
                    contact.reduced_jacobian = info.reduced_jacobian;
                    norm
                }
                None => {
                    let jc = point_jacobian(model, &poses, contact.link_index, &contact_point(model, &poses, contact.link_index))?;
                    let f = pseudo_inverse_auto(&jc).transpose() * &r_hat;
                    f.dot(&DVector::from_column_slice(contact.n_c.as_slice())).max(0.0)
                }
            };
            contact.r_hat = r_hat.clone();
            f_des = self.settings.k_f * magnitude;
            let tau = contact_safe_from_terms(
                model,
                q,
                qd,
                &terms,
                &self.hold_pose,
                &Twist::zeros(),
                &contact,
                &r_hat,
                &self.settings.gains,
                f_des,
                &self.settings.shaping,
            )?;
            self.contact = Some(contact);
            tau
        } else {
            let m = &terms.m;
            let bias = &terms.coriolis + &terms.g;
            tracking_from_terms(m, &bias, q, qd, &input.reference.q, &input.reference.qd, &self.settings.gains)
        };
        self.f_des = f_des;
        self.last_torque = torque.clone();
        let transition = (before != self.mode).then_some((before, self.mode));
        Ok(TickOutput {
            mode: self.mode,
            torque,
            r_hat,
            f_des,
            contact_link: self.contact.as_ref().map(|c| c.link_index),
            transition,
        })
    }
}
