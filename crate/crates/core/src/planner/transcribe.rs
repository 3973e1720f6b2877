//! Transcription of the receding-horizon problem into a convex QP.
//!
//! Decision vector `z = [x_0 … x_N, u_0 … u_{N−1}, t_1 … t_N]` with `x_k = (q_k, q̇_k)`,
//! `u_k = q̈_k` and one elastic slack `t_k ≥ 0` per node. The slack relaxes every state
//! row of its node (position box, velocity box, linearized distances) and carries a
//! steep exact penalty, so it is zero whenever the hard constraints can be met.

use nalgebra::{DMatrix, DVector};

use super::config::MpcConfig;
use super::cost::CostContext;
use super::qp::{QpProblem, RowKind, SparseRow};
use super::PlannerInput;
use crate::error::{Error, Result};
use crate::geometry::{all_pairs, closest_pair_per_link, distance_gradient, DistanceResult};
use crate::model::RobotModel;

/// Offsets of the blocks inside the decision vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Layout {
    pub dof: usize,
    pub horizon: usize,
}

impl Layout {
    pub fn nx(&self) -> usize {
        2 * self.dof
    }
    pub fn x(&self, k: usize) -> usize {
        k * self.nx()
    }
    pub fn u(&self, k: usize) -> usize {
        (self.horizon + 1) * self.nx() + k * self.dof
    }
    /// Slack of node `k`, `1 ≤ k ≤ N`.
    pub fn t(&self, k: usize) -> usize {
        (self.horizon + 1) * self.nx() + self.horizon * self.dof + (k - 1)
    }
    pub fn num_state_vars(&self) -> usize {
        (self.horizon + 1) * self.nx()
    }
    pub fn num_input_vars(&self) -> usize {
        self.horizon * self.dof
    }
    pub fn num_slack_vars(&self) -> usize {
        self.horizon
    }
    pub fn num_vars(&self) -> usize {
        self.num_state_vars() + self.num_input_vars() + self.num_slack_vars()
    }
}

/// A linearized distance row `d + ∇d·(q_k − q̂) ≥ d_th1` at node `k`.
#[derive(Clone, Debug)]
pub struct DistanceRow {
    pub node: usize,
    pub pair: DistanceResult,
    pub gradient: DVector<f64>,
    pub row: usize,
}

#[derive(Clone, Debug)]
pub struct MpcProblem {
    pub layout: Layout,
    pub qp: QpProblem,
    pub x0: DVector<f64>,
    pub context: CostContext,
    pub distance_rows: Vec<DistanceRow>,
    /// Number of (body, obstacle) pairs inside the activation radius.
    pub active_pairs: usize,
    pub num_defect_rows: usize,
    pub num_pin_rows: usize,
    pub initial_states: Vec<DVector<f64>>,
    pub initial_inputs: Vec<DVector<f64>>,
    pub dt: f64,
    pub q_bounds: (DVector<f64>, DVector<f64>),
    pub qd_bound: DVector<f64>,
    pub u_bound: DVector<f64>,
}

impl MpcProblem {
    pub fn num_distance_rows(&self) -> usize {
        self.distance_rows.len()
    }

    pub fn unpack(&self, z: &DVector<f64>) -> (Vec<DVector<f64>>, Vec<DVector<f64>>, Vec<f64>) {
        let l = self.layout;
        let xs = (0..=l.horizon).map(|k| z.rows(l.x(k), l.nx()).into_owned()).collect();
        let us = (0..l.horizon).map(|k| z.rows(l.u(k), l.dof).into_owned()).collect();
        let ts = (1..=l.horizon).map(|k| z[l.t(k)]).collect();
        (xs, us, ts)
    }

    pub fn pack(&self, xs: &[DVector<f64>], us: &[DVector<f64>], ts: &[f64]) -> DVector<f64> {
        let l = self.layout;
        let mut z = DVector::zeros(l.num_vars());
        for (k, x) in xs.iter().enumerate() {
            z.rows_mut(l.x(k), l.nx()).copy_from(x);
        }
        for (k, u) in us.iter().enumerate() {
            z.rows_mut(l.u(k), l.dof).copy_from(u);
        }
        for (k, t) in ts.iter().enumerate() {
            z[l.t(k + 1)] = *t;
        }
        z
    }
}

/// Explicit Euler model `q⁺ = q + Δt q̇`, `q̇⁺ = q̇ + Δt u`.
pub fn euler_step(x: &DVector<f64>, u: &DVector<f64>, dt: f64) -> DVector<f64> {
    let n = u.len();
    let mut next = x.clone();
    for i in 0..n {
        next[i] += dt * x[n + i];
        next[n + i] += dt * u[i];
    }
    next
}

/// Gaps `x_{k+1} − f(x_k, u_k)` for `k = 0 … N−1`.
pub fn shooting_defects(xs: &[DVector<f64>], us: &[DVector<f64>], dt: f64) -> Result<Vec<DVector<f64>>> {
    if xs.len() != us.len() + 1 {
        return Err(Error::dim("shooting nodes", us.len() + 1, xs.len()));
    }
    us.iter()
        .enumerate()
        .map(|(k, u)| {
            if xs[k].len() != 2 * u.len() || xs[k + 1].len() != xs[k].len() {
                return Err(Error::dim("shooting state", 2 * u.len(), xs[k].len()));
            }
            Ok(&xs[k + 1] - euler_step(&xs[k], u, dt))
        })
        .collect()
}

/// Previous plan advanced one node, last node and input duplicated.
pub fn shift_solution(xs: &[DVector<f64>], us: &[DVector<f64>]) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let mut x: Vec<_> = xs.iter().skip(1).cloned().collect();
    x.push(xs.last().expect("non-empty plan").clone());
    let mut u: Vec<_> = us.iter().skip(1).cloned().collect();
    u.push(us.last().expect("non-empty plan").clone());
    (x, u)
}

/// Adds `‖B v − a‖²_W` on the variables starting at `offset` to a Hessian block.
fn add_least_squares(
    block: &mut DMatrix<f64>,
    grad: &mut DVector<f64>,
    constant: &mut f64,
    local: usize,
    global: usize,
    b: &DMatrix<f64>,
    a: &DVector<f64>,
    w: &DVector<f64>,
) {
    let k = b.ncols();
    let mut wb = b.clone();
    for (r, wr) in w.iter().enumerate() {
        wb.row_mut(r).scale_mut(*wr);
    }
    let h = b.transpose() * &wb * 2.0;
    let mut hv = block.view_mut((local, local), (k, k));
    hv += h;
    let g = wb.transpose() * a * -2.0;
    let mut gv = grad.rows_mut(global, k);
    gv += g;
    *constant += a.iter().zip(w.iter()).map(|(ai, wi)| ai * ai * wi).sum::<f64>();
}

pub fn transcribe(input: &PlannerInput, cfg: &MpcConfig, model: &RobotModel) -> Result<MpcProblem> {
    let n = model.dof();
    cfg.validate(n)?;
    let layout = Layout { dof: n, horizon: cfg.horizon };
    if input.x0.len() != 2 * n {
        return Err(Error::dim("initial state", 2 * n, input.x0.len()));
    }
    if input.x0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InfeasibleInitialState("non-finite measurement".into()));
    }
    let lo = model.lower_position_limits();
    let hi = model.upper_position_limits();
    let vmax = DVector::from_iterator(n, model.joint_limits.iter().map(|l| l.velocity));
    let amax = DVector::from_iterator(n, model.joint_limits.iter().map(|l| l.acceleration));

    let mut x0 = input.x0.clone();
    let mut clamped = false;
    for i in 0..n {
        let q = x0[i].clamp(lo[i], hi[i]);
        let v = x0[n + i].clamp(-vmax[i], vmax[i]);
        clamped |= q != x0[i] || v != x0[n + i];
        x0[i] = q;
        x0[n + i] = v;
    }
    if clamped {
        log::warn!("measured state outside joint limits; clamped");
    }
    let q0 = x0.rows(0, n).into_owned();
    let qd0 = x0.rows(n, n).into_owned();

    let per_link = closest_pair_per_link(model, &q0, &input.obstacles)?;
    let mut context = CostContext::new(model, &q0, &qd0, &input.t_ref, &per_link, cfg)?;
    if let Some(target) = &input.posture {
        if target.len() != n {
            return Err(Error::dim("posture target", n, target.len()));
        }
        context.posture = Some((target.clone(), cfg.posture_weight));
    }

    let mut pairs = Vec::new();
    for r in all_pairs(model, &q0, &input.obstacles)? {
        if r.distance >= cfg.activation_radius {
            continue;
        }
        match distance_gradient(model, &q0, &r) {
            Ok(g) => pairs.push((r, g)),
            Err(e) => log::warn!("pair (body {}, obstacle {}) not linearized: {e}", r.body_index, r.obstacle_index),
        }
    }

    // costs
    let nv = layout.num_vars();
    let nx = layout.nx();
    let mut gradient = DVector::zeros(nv);
    let mut constant = 0.0;
    let mut blocks = Vec::new();
    let jac = &context.jacobian;
    let v_ref = DVector::from_column_slice(context.v_ref.0.as_slice());
    let ee_target = &v_ref + jac * &q0;
    let eye = DMatrix::identity(n, n);
    for k in 0..=layout.horizon {
        let terminal = k == layout.horizon;
        let mut hx = DMatrix::zeros(nx, nx);
        let off = layout.x(k);
        let w_ee = if terminal { &context.w_ee_f } else { &context.w_ee } * context.lambda;
        add_least_squares(&mut hx, &mut gradient, &mut constant, 0, off, jac, &ee_target, &w_ee);
        if let Some((target, w)) = &context.posture {
            add_least_squares(&mut hx, &mut gradient, &mut constant, 0, off, &eye, target, &DVector::from_element(n, *w));
        }
        let w_s = if terminal { &context.w_s_f } else { &context.w_s };
        add_least_squares(&mut hx, &mut gradient, &mut constant, n, off + n, &eye, &DVector::zeros(n), w_s);
        if !terminal {
            for term in &context.repulsion {
                let a = &context.projector * &term.target;
                add_least_squares(&mut hx, &mut gradient, &mut constant, n, off + n, &context.projector, &a, &context.w_rep);
            }
        }
        blocks.push((off, hx));
        if !terminal {
            let mut hu = DMatrix::zeros(n, n);
            add_least_squares(&mut hu, &mut gradient, &mut constant, 0, layout.u(k), &eye, &DVector::zeros(n), &context.w_r);
            blocks.push((layout.u(k), hu));
        }
        if k > 0 {
            blocks.push((layout.t(k), DMatrix::from_element(1, 1, 2.0 * cfg.slack_quadratic)));
            gradient[layout.t(k)] += cfg.slack_linear;
        }
    }

    let mut var_stage = vec![0usize; nv];
    for k in 0..=layout.horizon {
        for j in 0..nx {
            var_stage[layout.x(k) + j] = k;
        }
        if k < layout.horizon {
            for j in 0..n {
                var_stage[layout.u(k) + j] = k;
            }
        }
        if k > 0 {
            var_stage[layout.t(k)] = k;
        }
    }

    // equality rows
    let mut rows = Vec::new();
    for j in 0..nx {
        rows.push(SparseRow { entries: vec![(layout.x(0) + j, 1.0)], rhs: x0[j], kind: RowKind::Eq, stage: 0 });
    }
    let num_pin_rows = rows.len();
    let dt = cfg.dt;
    for k in 0..layout.horizon {
        let (xk, xk1, uk) = (layout.x(k), layout.x(k + 1), layout.u(k));
        for i in 0..n {
            rows.push(SparseRow {
                entries: vec![(xk + i, -1.0), (xk + n + i, -dt), (xk1 + i, 1.0)],
                rhs: 0.0,
                kind: RowKind::Eq,
                stage: k,
            });
        }
        for i in 0..n {
            rows.push(SparseRow {
                entries: vec![(xk + n + i, -1.0), (uk + i, -dt), (xk1 + n + i, 1.0)],
                rhs: 0.0,
                kind: RowKind::Eq,
                stage: k,
            });
        }
    }
    let num_defect_rows = rows.len() - num_pin_rows;

    // inequality rows
    let ge = |entries: Vec<(usize, f64)>, rhs: f64| SparseRow { entries, rhs, kind: RowKind::Ge, stage: 0 };
    let mut distance_rows = Vec::new();
    for k in 1..=layout.horizon {
        let (xk, tk) = (layout.x(k), layout.t(k));
        for i in 0..n {
            rows.push(ge(vec![(xk + i, 1.0), (tk, 1.0)], lo[i]));
            rows.push(ge(vec![(xk + i, -1.0), (tk, 1.0)], -hi[i]));
        }
        for i in 0..n {
            rows.push(ge(vec![(xk + n + i, 1.0), (tk, 1.0)], -vmax[i]));
            rows.push(ge(vec![(xk + n + i, -1.0), (tk, 1.0)], -vmax[i]));
        }
        for (pair, g) in &pairs {
            let mut entries: Vec<(usize, f64)> =
                g.iter().enumerate().filter(|(_, v)| **v != 0.0).map(|(i, v)| (xk + i, *v)).collect();
            entries.push((tk, 1.0));
            distance_rows.push(DistanceRow { node: k, pair: pair.clone(), gradient: g.clone(), row: rows.len() });
            rows.push(ge(entries, cfg.d_th1 - pair.distance + g.dot(&q0)));
        }
        rows.push(ge(vec![(tk, 1.0)], 0.0));
    }
    for k in 0..layout.horizon {
        for i in 0..n {
            rows.push(ge(vec![(layout.u(k) + i, 1.0)], -amax[i]));
            rows.push(ge(vec![(layout.u(k) + i, -1.0)], -amax[i]));
        }
    }

    let (initial_states, initial_inputs) = match &input.warm_start {
        Some(ws) if ws.states.len() == layout.horizon + 1 && ws.states[0].len() == nx => {
            shift_solution(&ws.states, &ws.inputs)
        }
        _ => (vec![x0.clone(); layout.horizon + 1], vec![DVector::zeros(n); layout.horizon]),
    };

    Ok(MpcProblem {
        layout,
        qp: QpProblem { hessian_blocks: blocks, gradient, constant, rows, var_stage },
        x0,
        context,
        active_pairs: pairs.len(),
        distance_rows,
        num_defect_rows,
        num_pin_rows,
        initial_states,
        initial_inputs,
        dt,
        q_bounds: (lo, hi),
        qd_bound: vmax,
        u_bound: amax,
    })
}

/// Feasible starting point: roll out the clamped guess inputs from `x_0` and lift each
/// node's slack to cover its worst violation.
pub fn feasible_start(p: &MpcProblem) -> DVector<f64> {
    let l = p.layout;
    let n = l.dof;
    let us: Vec<DVector<f64>> = p
        .initial_inputs
        .iter()
        .map(|u| DVector::from_fn(n, |i, _| u[i].clamp(-p.u_bound[i], p.u_bound[i])))
        .collect();
    let mut xs = vec![p.x0.clone()];
    for u in &us {
        let next = euler_step(xs.last().unwrap(), u, p.dt);
        xs.push(next);
    }
    let ts = vec![0.0; l.horizon];
    let mut z = p.pack(&xs, &us, &ts);
    for r in p.qp.rows.iter().filter(|r| r.kind == RowKind::Ge) {
        if let Some(&(t_idx, _)) = r.entries.iter().find(|(j, _)| *j >= l.num_state_vars() + l.num_input_vars()) {
            let without: f64 = r.entries.iter().filter(|(j, _)| *j != t_idx).map(|&(j, a)| a * z[j]).sum();
            let need = r.rhs - without;
            if need > z[t_idx] {
                z[t_idx] = need;
            }
        }
    }
    z
}

/// Single-shooting form: states eliminated by rollout, `z = z₀ + Γw` with
/// `w = [u_0 … u_{N−1}, t_1 … t_N]`.
pub struct Condensed {
    pub qp: QpProblem,
    pub z0: DVector<f64>,
    pub gamma: DMatrix<f64>,
}

pub fn condense(p: &MpcProblem) -> Condensed {
    let l = p.layout;
    let n = l.dof;
    let n_in = l.num_input_vars();
    let nw = n_in + l.num_slack_vars();
    let nv = l.num_vars();
    let mut gamma = DMatrix::zeros(nv, nw);
    for k in 0..l.horizon {
        for i in 0..n {
            // q_{k+1} = q_k + Δt q̇_k, q̇_{k+1} = q̇_k + Δt u_k
            for c in 0..nw {
                let q = gamma[(l.x(k) + i, c)] + p.dt * gamma[(l.x(k) + n + i, c)];
                let v = gamma[(l.x(k) + n + i, c)];
                gamma[(l.x(k + 1) + i, c)] = q;
                gamma[(l.x(k + 1) + n + i, c)] = v;
            }
            gamma[(l.x(k + 1) + n + i, k * n + i)] += p.dt;
        }
    }
    for c in 0..nw {
        gamma[(l.num_state_vars() + c, c)] = 1.0;
    }
    let mut xs = vec![p.x0.clone()];
    for _ in 0..l.horizon {
        let next = euler_step(xs.last().unwrap(), &DVector::zeros(n), p.dt);
        xs.push(next);
    }
    let z0 = p.pack(&xs, &vec![DVector::zeros(n); l.horizon], &vec![0.0; l.horizon]);

    let mut h = DMatrix::zeros(nw, nw);
    for (off, b) in &p.qp.hessian_blocks {
        let k = b.nrows();
        let g = gamma.rows(*off, k);
        let support: Vec<usize> = (0..nw).filter(|&c| g.column(c).iter().any(|v| *v != 0.0)).collect();
        if support.is_empty() {
            continue;
        }
        let gc = g.select_columns(support.iter());
        let hc = gc.transpose() * b * &gc;
        for (a, &ca) in support.iter().enumerate() {
            for (bb, &cb) in support.iter().enumerate() {
                h[(ca, cb)] += hc[(a, bb)];
            }
        }
    }
    let hz0 = p.qp.hessian_times(&z0);
    let gradient = gamma.transpose() * (&p.qp.gradient + &hz0);
    let constant = 0.5 * z0.dot(&hz0) + p.qp.gradient.dot(&z0) + p.qp.constant;
    let rows = p
        .qp
        .rows
        .iter()
        .filter(|r| r.kind == RowKind::Ge)
        .map(|r| {
            let mut dense = vec![0.0; nw];
            for &(j, a) in &r.entries {
                for (c, d) in dense.iter_mut().enumerate() {
                    *d += a * gamma[(j, c)];
                }
            }
            SparseRow {
                entries: dense.into_iter().enumerate().filter(|(_, v)| *v != 0.0).collect(),
                rhs: r.rhs - r.dot(z0.as_slice()),
                kind: RowKind::Ge,
                stage: 0,
            }
        })
        .collect();
    Condensed {
        qp: QpProblem { hessian_blocks: vec![(0, h)], gradient, constant, rows, var_stage: vec![0; nw] },
        z0,
        gamma,
    }
}
