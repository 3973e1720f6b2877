//! Stage and terminal costs evaluated on quantities frozen at the measurement.

use nalgebra::{DMatrix, DVector, Vector3};

use super::config::MpcConfig;
use crate::error::{Error, Result};
use crate::geometry::{DistanceResult, LinkDistances};
use crate::model::kinematics::{forward_kinematics, jacobian_from_poses, null_projector_auto, point_jacobian, pseudo_inverse_auto, Frame};
use crate::model::{Pose, RobotModel, Twist};

/// `log(T_now⁻¹ T_ref)`, expressed in the end-effector frame.
pub fn reference_twist(t_now: &Pose, t_ref: &Pose) -> Twist {
    t_now.minus(t_ref)
}

/// `J (q_k − q_now)` with `J` frozen at the measurement.
pub fn predicted_twist(j_now: &DMatrix<f64>, q_k: &DVector<f64>, q_now: &DVector<f64>) -> Result<Twist> {
    if j_now.nrows() != 6 || j_now.ncols() != q_k.len() || q_k.len() != q_now.len() {
        return Err(Error::dim("predicted twist", j_now.ncols(), q_k.len()));
    }
    let v = j_now * (q_k - q_now);
    Ok(Twist(nalgebra::Vector6::from_column_slice(v.as_slice())))
}

/// Goal relaxation `exp(−α(d_th2 − d)/(d_th2 − d_th1))` inside the repulsive band, 1 outside.
pub fn relaxation_factor(d: f64, cfg: &MpcConfig) -> f64 {
    if d < cfg.d_th2 {
        (-cfg.alpha * (cfg.d_th2 - d) / (cfg.d_th2 - cfg.d_th1)).exp()
    } else {
        1.0
    }
}

/// Repulsion `n k_rep (d_th2 − d)` for distances below `d_th2`; saturates at the
/// band maximum once `d` drops below `d_th1`.
pub fn repulsive_velocity(result: &DistanceResult, cfg: &MpcConfig) -> Vector3<f64> {
    if result.distance >= cfg.d_th2 || !result.normal_defined {
        return Vector3::zeros();
    }
    let d = result.distance.max(cfg.d_th1);
    result.normal * (cfg.k_rep * (cfg.d_th2 - d))
}

/// One repulsive term `‖N_t(q̇_k − target)‖²_Q`.
#[derive(Clone, Debug)]
pub struct RepulsionTerm {
    pub link_index: usize,
    pub obstacle_index: usize,
    /// `J̄_A v⁺` in joint space.
    pub target: DVector<f64>,
}

/// Everything the costs need, frozen at the measurement.
#[derive(Clone, Debug)]
pub struct CostContext {
    pub q_now: DVector<f64>,
    pub v_ref: Twist,
    /// End-effector Jacobian in the end-effector frame (6×n).
    pub jacobian: DMatrix<f64>,
    /// Null-space projector of the selected task rows.
    pub projector: DMatrix<f64>,
    pub lambda: f64,
    pub w_ee: DVector<f64>,
    pub w_ee_f: DVector<f64>,
    pub w_rep: DVector<f64>,
    pub w_s: DVector<f64>,
    pub w_s_f: DVector<f64>,
    pub w_r: DVector<f64>,
    pub repulsion: Vec<RepulsionTerm>,
    /// Joint target and weight of the optional posture term.
    pub posture: Option<(DVector<f64>, f64)>,
}

impl CostContext {
    pub fn new(
        model: &RobotModel,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        t_ref: &Pose,
        distances: &LinkDistances,
        cfg: &MpcConfig,
    ) -> Result<Self> {
        let n = model.dof();
        let poses = forward_kinematics(model, q)?;
        let t_now = poses[n];
        let hybrid = jacobian_from_poses(model, &poses, Frame::EndEffector)?;
        let rt = t_now.rotation.transpose();
        let mut jacobian = DMatrix::zeros(6, n);
        jacobian.rows_mut(0, 3).copy_from(&(rt * hybrid.fixed_rows::<3>(0)));
        jacobian.rows_mut(3, 3).copy_from(&(rt * hybrid.fixed_rows::<3>(3)));

        let selected: Vec<usize> = (0..6).filter(|&i| cfg.selection[i] == 1.0).collect();
        let task = jacobian.select_rows(selected.iter());
        let projector = if selected.is_empty() { DMatrix::identity(n, n) } else { null_projector_auto(&task) };

        let sel = DVector::from_column_slice(&cfg.selection);
        let w_ee = cfg.q_ee.to_vector(6, "planner.q_ee")?.component_mul(&sel);
        let w_ee_f = cfg.q_ee_f.to_vector(6, "planner.q_ee_f")?.component_mul(&sel);

        let lambda = match (cfg.task_oriented, distances.min()) {
            (true, Some(r)) => relaxation_factor(r.distance, cfg),
            _ => 1.0,
        };
        let mut repulsion = Vec::new();
        if cfg.task_oriented {
            for r in distances.results.iter().filter(|r| r.distance < cfg.d_th2 && r.normal_defined) {
                let ja = point_jacobian(model, &poses, r.link_index, &r.p_a)?;
                let v_plus = &ja * qd + DVector::from_column_slice(repulsive_velocity(r, cfg).as_slice());
                repulsion.push(RepulsionTerm {
                    link_index: r.link_index,
                    obstacle_index: r.obstacle_index,
                    target: pseudo_inverse_auto(&ja) * v_plus,
                });
            }
        }
        Ok(Self {
            q_now: q.clone(),
            v_ref: reference_twist(&t_now, t_ref),
            jacobian,
            projector,
            lambda,
            w_ee,
            w_ee_f,
            w_rep: cfg.q_rep.to_vector(n, "planner.q_rep")?,
            w_s: cfg.q_s.to_vector(n, "planner.q_s")?,
            w_s_f: cfg.q_s_f.to_vector(n, "planner.q_s_f")?,
            w_r: cfg.r.to_vector(n, "planner.r")?,
            repulsion,
            posture: None,
        })
    }

    fn ee_error(&self, q_k: &DVector<f64>) -> DVector<f64> {
        DVector::from_column_slice(self.v_ref.0.as_slice()) - &self.jacobian * (q_k - &self.q_now)
    }
}

fn weighted(v: &DVector<f64>, w: &DVector<f64>) -> f64 {
    v.iter().zip(w.iter()).map(|(a, b)| a * a * b).sum()
}

/// `‖N_t(q̇_k − target)‖²_Q` for one repulsion term.
pub fn repulsive_cost(qd_k: &DVector<f64>, term: &RepulsionTerm, ctx: &CostContext) -> f64 {
    weighted(&(&ctx.projector * (qd_k - &term.target)), &ctx.w_rep)
}

fn split(x: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
    let n = x.len() / 2;
    (x.rows(0, n).into_owned(), x.rows(n, n).into_owned())
}

fn posture_cost(q_k: &DVector<f64>, ctx: &CostContext) -> f64 {
    ctx.posture.as_ref().map_or(0.0, |(target, w)| w * (q_k - target).norm_squared())
}

/// `λ‖V_ref − V_k‖²_{SQ_ee} + Σ L_rep + ‖q̇_k‖²_{Q_s} + ‖u_k‖²_R` (plus the posture term when set).
pub fn stage_cost(x_k: &DVector<f64>, u_k: &DVector<f64>, ctx: &CostContext) -> f64 {
    let (q, qd) = split(x_k);
    let ee = ctx.lambda * weighted(&ctx.ee_error(&q), &ctx.w_ee);
    let rep: f64 = ctx.repulsion.iter().map(|t| repulsive_cost(&qd, t, ctx)).sum();
    ee + rep + weighted(&qd, &ctx.w_s) + weighted(u_k, &ctx.w_r) + posture_cost(&q, ctx)
}

pub fn terminal_cost(x_n: &DVector<f64>, ctx: &CostContext) -> f64 {
    let (q, qd) = split(x_n);
    ctx.lambda * weighted(&ctx.ee_error(&q), &ctx.w_ee_f) + weighted(&qd, &ctx.w_s_f) + posture_cost(&q, ctx)
}
