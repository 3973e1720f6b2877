//! Joint-space and task-space rigid-body dynamics.
//!
//! The mass matrix comes from the composite-rigid-body algorithm, bias torques from
//! recursive Newton–Euler, and the Coriolis matrix from Christoffel symbols of the
//! analytic mass-matrix derivatives. Everything is evaluated in world-frame Plücker
//! coordinates.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};

use super::kinematics::{forward_kinematics, jacobian_from_poses, joint_axes, pseudo_inverse_auto, Frame};
use super::pose::Pose;
use super::spatial::{crf, crm, revolute_motion, spatial_inertia};
use super::RobotModel;
use crate::error::{Error, Result};

/// Step for the central difference of `J` along `q̇`.
pub const JDOT_STEP: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct DynamicsTerms {
    /// Mass matrix.
    pub m: DMatrix<f64>,
    /// Christoffel-form Coriolis/centrifugal matrix; `Ṁ − 2C` is skew-symmetric.
    pub c: DMatrix<f64>,
    /// Gravity torque.
    pub g: DVector<f64>,
    /// `C q̇` from recursive Newton–Euler (equals `c * q̇` up to round-off).
    pub coriolis: DVector<f64>,
}

#[derive(Clone, Debug)]
pub struct TaskDynamicsTerms {
    /// Task inertia `J̄ᵀ M J̄`.
    pub lambda: DMatrix<f64>,
    /// Task bias `J̄ᵀ(Cq̇ + g) − Λ J̇ q̇`.
    pub eta: DVector<f64>,
    /// End-effector Jacobian used (world-aligned, angular rows first).
    pub jacobian: DMatrix<f64>,
    pub jacobian_pinv: DMatrix<f64>,
}

struct ChainState {
    motions: Vec<Vector6<f64>>,
    inertias: Vec<Matrix6<f64>>,
}

fn chain_state(model: &RobotModel, poses: &[Pose]) -> ChainState {
    let motions = joint_axes(model, poses).iter().map(|(z, o)| revolute_motion(z, o)).collect();
    let inertias = model
        .links
        .iter()
        .zip(poses.iter())
        .map(|(l, p)| {
            let c = p.transform_point(&l.com);
            let ic = p.rotation * l.inertia * p.rotation.transpose();
            spatial_inertia(l.mass, &c, &ic)
        })
        .collect();
    ChainState { motions, inertias }
}

/// Composite inertias `Ic_i = Σ_{k ≥ i} I_k`.
fn composite_inertias(inertias: &[Matrix6<f64>]) -> Vec<Matrix6<f64>> {
    let n = inertias.len();
    let mut ic = inertias.to_vec();
    for i in (0..n.saturating_sub(1)).rev() {
        ic[i] = ic[i] + ic[i + 1];
    }
    ic
}

fn crba(state: &ChainState) -> DMatrix<f64> {
    let n = state.motions.len();
    let ic = composite_inertias(&state.inertias);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = state.motions[i].dot(&(ic[j] * state.motions[j]));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

fn rnea(model: &RobotModel, state: &ChainState, qd: &DVector<f64>, qdd: &DVector<f64>) -> DVector<f64> {
    let n = state.motions.len();
    let g = model.gravity;
    let mut v = Vector6::zeros();
    let mut a = Vector6::new(0.0, 0.0, 0.0, -g.x, -g.y, -g.z);
    let mut forces = Vec::with_capacity(n);
    for i in 0..n {
        let s = state.motions[i];
        v += s * qd[i];
        a += s * qdd[i] + crm(&v) * s * qd[i];
        let inertia = &state.inertias[i];
        forces.push(inertia * a + crf(&v) * (inertia * v));
    }
    let mut tau = DVector::zeros(n);
    let mut acc = Vector6::zeros();
    for i in (0..n).rev() {
        acc += forces[i];
        tau[i] = state.motions[i].dot(&acc);
    }
    tau
}

/// `∂M/∂q_k` for every `k`.
fn mass_matrix_partials(state: &ChainState) -> Vec<DMatrix<f64>> {
    let n = state.motions.len();
    let s = &state.motions;
    let ic = composite_inertias(&state.inertias);
    let mut out = Vec::with_capacity(n);
    for k in 0..n {
        let xk = crm(&s[k]);
        let fk = crf(&s[k]);
        // ∂S_j/∂q_k is nonzero only for joints downstream of k
        let ds: Vec<Vector6<f64>> = (0..n).map(|j| if k < j { xk * s[j] } else { Vector6::zeros() }).collect();
        let dic: Vec<Matrix6<f64>> = (0..n)
            .map(|l| {
                let c = &ic[l.max(k)];
                fk * c - c * xk
            })
            .collect();
        let mut dm = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let l = j;
                let v = ds[i].dot(&(ic[l] * s[j])) + s[i].dot(&(dic[l] * s[j])) + s[i].dot(&(ic[l] * ds[j]));
                dm[(i, j)] = v;
                dm[(j, i)] = v;
            }
        }
        out.push(dm);
    }
    out
}

fn christoffel(partials: &[DMatrix<f64>], qd: &DVector<f64>) -> DMatrix<f64> {
    let n = qd.len();
    let mut c = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let mut acc = 0.0;
            for k in 0..n {
                acc += 0.5 * (partials[k][(i, j)] + partials[j][(i, k)] - partials[i][(j, k)]) * qd[k];
            }
            c[(i, j)] = acc;
        }
    }
    c
}

fn check_finite(what: &str, v: &DVector<f64>) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::InvalidModel(format!("non-finite {what}")))
    }
}

pub fn mass_matrix(model: &RobotModel, q: &DVector<f64>) -> Result<DMatrix<f64>> {
    let poses = forward_kinematics(model, q)?;
    Ok(crba(&chain_state(model, &poses)))
}

/// `Ṁ(q, q̇) = Σ_k ∂M/∂q_k q̇_k`.
pub fn mass_matrix_derivative(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DMatrix<f64>> {
    model.check_q("joint velocities", qd)?;
    let poses = forward_kinematics(model, q)?;
    let partials = mass_matrix_partials(&chain_state(model, &poses));
    let n = model.dof();
    Ok(partials.iter().enumerate().fold(DMatrix::zeros(n, n), |acc, (k, p)| acc + p * qd[k]))
}

/// Torque needed to realise `q̈` at `(q, q̇)` (no external forces).
pub fn inverse_dynamics(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>, qdd: &DVector<f64>) -> Result<DVector<f64>> {
    model.check_q("joint velocities", qd)?;
    model.check_q("joint accelerations", qdd)?;
    let poses = forward_kinematics(model, q)?;
    Ok(rnea(model, &chain_state(model, &poses), qd, qdd))
}

pub fn dynamics_terms(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DynamicsTerms> {
    model.check_q("joint velocities", qd)?;
    check_finite("joint velocity", qd)?;
    let poses = forward_kinematics(model, q)?;
    let state = chain_state(model, &poses);
    let n = model.dof();
    let zeros = DVector::zeros(n);
    let m = crba(&state);
    let g = rnea(model, &state, &zeros, &zeros);
    let coriolis = rnea(model, &state, qd, &zeros) - &g;
    let c = christoffel(&mass_matrix_partials(&state), qd);
    Ok(DynamicsTerms { m, c, g, coriolis })
}

/// Bias torque `C q̇ + g` only (cheaper than [`dynamics_terms`]).
pub fn bias_torque(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    model.check_q("joint velocities", qd)?;
    let poses = forward_kinematics(model, q)?;
    let state = chain_state(model, &poses);
    let zeros = DVector::zeros(model.dof());
    Ok((crba(&state), rnea(model, &state, qd, &zeros)))
}

/// `q̈ = M⁻¹(τ + τ_ext − C q̇ − g)`.
pub fn forward_dynamics(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    tau_ext: &DVector<f64>,
) -> Result<DVector<f64>> {
    model.check_q("joint torques", tau)?;
    model.check_q("external torques", tau_ext)?;
    let (m, bias) = bias_torque(model, q, qd)?;
    let rhs = tau + tau_ext - bias;
    let chol = m
        .cholesky()
        .ok_or_else(|| Error::InvalidModel("mass matrix is not positive definite".into()))?;
    Ok(chol.solve(&rhs))
}

/// One classical Runge–Kutta step of the forward dynamics with torques held constant.
pub fn rk4_step(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    tau_ext: &DVector<f64>,
    dt: f64,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let f = |q: &DVector<f64>, qd: &DVector<f64>| forward_dynamics(model, q, qd, tau, tau_ext);
    let a1 = f(q, qd)?;
    let (q2, v2) = (q + qd * (dt / 2.0), qd + &a1 * (dt / 2.0));
    let a2 = f(&q2, &v2)?;
    let (q3, v3) = (q + &v2 * (dt / 2.0), qd + &a2 * (dt / 2.0));
    let a3 = f(&q3, &v3)?;
    let (q4, v4) = (q + &v3 * dt, qd + &a3 * dt);
    let a4 = f(&q4, &v4)?;
    let q_next = q + (qd + &v2 * 2.0 + &v3 * 2.0 + &v4) * (dt / 6.0);
    let qd_next = qd + (a1 + a2 * 2.0 + a3 * 2.0 + a4) * (dt / 6.0);
    Ok((q_next, qd_next))
}

/// End-effector task-space dynamics. The pseudo-inverse falls back to damped least
/// squares near singularities (see [`pseudo_inverse_auto`]).
pub fn task_dynamics(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<TaskDynamicsTerms> {
    let terms = dynamics_terms(model, q, qd)?;
    task_dynamics_from_terms(model, q, qd, &terms)
}

pub(crate) fn task_dynamics_from_terms(
    model: &RobotModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    terms: &DynamicsTerms,
) -> Result<TaskDynamicsTerms> {
    let poses = forward_kinematics(model, q)?;
    let jac = jacobian_from_poses(model, &poses, Frame::EndEffector)?;
    let pinv = pseudo_inverse_auto(&jac);
    let lambda = pinv.transpose() * &terms.m * &pinv;
    let jdot_qd = jacobian_dot_times_qd(model, q, qd)?;
    let eta = pinv.transpose() * (&terms.coriolis + &terms.g) - &lambda * jdot_qd;
    Ok(TaskDynamicsTerms { lambda, eta, jacobian: jac, jacobian_pinv: pinv })
}

/// `J̇ q̇` at the end effector by central differences of `J` along `q̇`.
pub fn jacobian_dot_times_qd(model: &RobotModel, q: &DVector<f64>, qd: &DVector<f64>) -> Result<DVector<f64>> {
    let h = JDOT_STEP;
    let jp = super::geometric_jacobian(model, &(q + qd * h), Frame::EndEffector)?;
    let jm = super::geometric_jacobian(model, &(q - qd * h), Frame::EndEffector)?;
    Ok((jp - jm) / (2.0 * h) * qd)
}
