//! Numerical property suites over the bundled robot models.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::geometry::{closest_pair_per_link, distance_gradient, Primitive};
use crate::model::{
    dynamics_terms, forward_dynamics, forward_kinematics, geometric_jacobian, inverse_dynamics, null_projector,
    panda_like, planar_2r, planar_3r, Frame, Pose, RobotModel,
};
use crate::planner::qp::{solve_qp, QpProblem, QpSettings};
use crate::planner::{shooting_defects, solve, transcribe, MpcConfig, PlannerInput};

/// Deliberate defects used to check that the suites can fail.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mutation {
    /// Flips the sign of the gravity torque fed to the gravity oracle.
    GravitySign,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteResult {
    pub name: &'static str,
    pub passed: usize,
    pub total: usize,
    /// Largest error seen against the suite tolerance.
    pub worst: f64,
    pub tolerance: f64,
}

impl SuiteResult {
    fn new(name: &'static str, tolerance: f64) -> Self {
        Self { name, passed: 0, total: 0, worst: 0.0, tolerance }
    }

    fn check(&mut self, err: f64) {
        self.total += 1;
        if err.is_nan() {
            self.worst = f64::NAN;
        } else {
            self.worst = self.worst.max(err);
        }
        if err <= self.tolerance {
            self.passed += 1;
        }
    }

    pub fn ok(&self) -> bool {
        self.total > 0 && self.passed == self.total
    }
}

pub fn bundled_models() -> Vec<(&'static str, RobotModel)> {
    vec![
        ("planar_2r", planar_2r(1.0, 1.0, 1.0, 1.0)),
        ("planar_3r", planar_3r()),
        ("panda_like", panda_like()),
    ]
}

fn random_q(model: &RobotModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let lo = model.lower_position_limits();
    let hi = model.upper_position_limits();
    DVector::from_fn(model.dof(), |i, _| {
        let (a, b) = (lo[i].max(-2.8), hi[i].min(2.8));
        rng.random_range(a..b)
    })
}

fn random_vec(n: usize, scale: f64, rng: &mut ChaCha8Rng) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(-scale..scale))
}

/// Twist `[ω; v]` taking `a` to `b` over a unit step, world-aligned at the moving point.
fn world_rate(a: &Pose, b: &Pose) -> DVector<f64> {
    let dr = b.rotation * a.rotation.transpose();
    let w = Vector3::new(dr[(2, 1)] - dr[(1, 2)], dr[(0, 2)] - dr[(2, 0)], dr[(1, 0)] - dr[(0, 1)]) * 0.5;
    let v = b.translation - a.translation;
    DVector::from_column_slice(&[w.x, w.y, w.z, v.x, v.y, v.z])
}

fn jacobian_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("jacobian-fd", 1e-5);
    let h = 1e-6;
    for (_, m) in bundled_models() {
        for _ in 0..50 {
            let q = random_q(&m, rng);
            let j = geometric_jacobian(&m, &q, Frame::EndEffector).expect("jacobian");
            let mut fd = DMatrix::zeros(6, m.dof());
            for i in 0..m.dof() {
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[i] += h;
                qm[i] -= h;
                let tp = forward_kinematics(&m, &qp).expect("fk")[m.dof()];
                let tm = forward_kinematics(&m, &qm).expect("fk")[m.dof()];
                fd.set_column(i, &(world_rate(&tm, &tp) / (2.0 * h)));
            }
            s.check((j - fd).amax());
        }
    }
    s
}

fn distance_gradient_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("distance-gradient-fd", 1e-5);
    let h = 1e-6;
    for (_, m) in bundled_models() {
        let mut done = 0;
        while done < 50 {
            let q = random_q(&m, rng);
            let poses = forward_kinematics(&m, &q).expect("fk");
            let anchor = poses[rng.random_range(1..=m.dof())].translation;
            let centre = anchor + Vector3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            let obs = [Primitive::sphere(centre, 0.05)];
            let dist = |q: &DVector<f64>| closest_pair_per_link(&m, q, &obs).expect("distance").min().cloned();
            let Some(r) = dist(&q) else { continue };
            if r.distance <= 1e-3 || !r.normal_defined {
                continue;
            }
            let g = distance_gradient(&m, &q, &r).expect("gradient");
            let mut err: f64 = 0.0;
            let mut same_pair = true;
            for i in 0..m.dof() {
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[i] += h;
                qm[i] -= h;
                let (Some(a), Some(b)) = (dist(&qp), dist(&qm)) else { continue };
                same_pair &= a.link_index == r.link_index && b.link_index == r.link_index;
                err = err.max((g[i] - (a.distance - b.distance) / (2.0 * h)).abs());
            }
            if same_pair {
                s.check(err);
                done += 1;
            }
        }
    }
    s
}

fn mass_matrix_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("mass-matrix-spd", 1e-10);
    for (_, m) in bundled_models() {
        for _ in 0..1000 {
            let q = random_q(&m, rng);
            let terms = dynamics_terms(&m, &q, &DVector::zeros(m.dof())).expect("dynamics");
            let asym = (&terms.m - terms.m.transpose()).amax() / terms.m.amax();
            let spd = terms.m.clone().cholesky().is_some();
            s.check(if spd { asym } else { f64::INFINITY });
        }
    }
    s
}

fn gravity_suite(rng: &mut ChaCha8Rng, mutation: Option<Mutation>) -> SuiteResult {
    let mut s = SuiteResult::new("gravity-potential-fd", 1e-5);
    let h = 1e-6;
    let sign = if mutation == Some(Mutation::GravitySign) { -1.0 } else { 1.0 };
    for (_, m) in bundled_models() {
        for _ in 0..50 {
            let q = random_q(&m, rng);
            let g = dynamics_terms(&m, &q, &DVector::zeros(m.dof())).expect("dynamics").g * sign;
            let mut err: f64 = 0.0;
            for i in 0..m.dof() {
                let (mut qp, mut qm) = (q.clone(), q.clone());
                qp[i] += h;
                qm[i] -= h;
                let fd = (m.potential_energy(&qp).expect("pe") - m.potential_energy(&qm).expect("pe")) / (2.0 * h);
                err = err.max((g[i] - fd).abs());
            }
            s.check(err);
        }
    }
    s
}

fn passivity_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("coriolis-skew", 1e-8);
    for (_, m) in bundled_models() {
        for _ in 0..50 {
            let q = random_q(&m, rng);
            let qd = random_vec(m.dof(), 1.5, rng);
            let terms = dynamics_terms(&m, &q, &qd).expect("dynamics");
            let mdot = crate::model::dynamics::mass_matrix_derivative(&m, &q, &qd).expect("mdot");
            let n = &mdot - &terms.c * 2.0;
            s.check((&n + n.transpose()).amax());
        }
    }
    s
}

fn dynamics_roundtrip_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("dynamics-roundtrip", 1e-8);
    for (_, m) in bundled_models() {
        let zero = DVector::zeros(m.dof());
        for _ in 0..50 {
            let q = random_q(&m, rng);
            let qd = random_vec(m.dof(), 1.5, rng);
            let tau = random_vec(m.dof(), 20.0, rng);
            let qdd = forward_dynamics(&m, &q, &qd, &tau, &zero).expect("forward dynamics");
            let back = inverse_dynamics(&m, &q, &qd, &qdd).expect("inverse dynamics");
            s.check((back - &tau).amax() / (1.0 + tau.amax()));
        }
    }
    s
}

fn projector_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("null-projector", 1e-8);
    let m = panda_like();
    for _ in 0..200 {
        let q = random_q(&m, rng);
        let j = geometric_jacobian(&m, &q, Frame::EndEffector).expect("jacobian");
        let rows: Vec<usize> = (0..6).filter(|_| rng.random_bool(0.7)).collect();
        let task = if rows.is_empty() { j } else { j.select_rows(rows.iter()) };
        let Ok(n) = null_projector(&task) else { continue };
        let idem = (&n * &n - &n).amax();
        let annihilate = (&task * &n).amax();
        s.check(idem.max(annihilate));
    }
    s
}

fn qp_oracle_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("qp-dense-oracle", 1e-6);
    for _ in 0..50 {
        let blocks = rng.random_range(1..6);
        let size = rng.random_range(1..5);
        let n = blocks * size;
        let mut p = QpProblem { gradient: random_vec(n, 1.0, rng), var_stage: (0..n).map(|i| i / size).collect(), ..Default::default() };
        for b in 0..blocks {
            let a = DMatrix::from_fn(size, size, |_, _| rng.random_range(-1.0..1.0));
            p.hessian_blocks.push((b * size, &a * a.transpose() + DMatrix::identity(size, size) * 0.1));
        }
        let sol = solve_qp(&p, &DVector::zeros(n), &QpSettings::default()).expect("qp");
        let dense = p.dense_hessian().lu().solve(&(-&p.gradient)).expect("dense solve");
        s.check(if sol.converged { (sol.z - dense).amax() } else { f64::INFINITY });
    }
    s
}

fn defect_suite(rng: &mut ChaCha8Rng) -> SuiteResult {
    let mut s = SuiteResult::new("shooting-defects", 1e-8);
    for (_, m) in bundled_models() {
        let cfg = MpcConfig { horizon: 15, ..Default::default() };
        for _ in 0..5 {
            let q = random_q(&m, rng);
            let mut x0 = DVector::zeros(2 * m.dof());
            x0.rows_mut(0, m.dof()).copy_from(&q);
            let t = forward_kinematics(&m, &q).expect("fk")[m.dof()];
            let t_ref = Pose::new(t.rotation, t.translation + Vector3::from_fn(|_, _| rng.random_range(-0.05..0.05)));
            let input = PlannerInput { x0, t_ref, obstacles: vec![], warm_start: None, posture: None };
            let problem = transcribe(&input, &cfg, &m).expect("transcribe");
            let sol = solve(&problem, &cfg).expect("solve");
            if !sol.converged {
                continue;
            }
            let d = shooting_defects(&sol.states, &sol.inputs, cfg.dt).expect("defects");
            s.check(d.iter().map(|g| g.amax()).fold(0.0, f64::max));
        }
    }
    s
}

/// Runs every suite; `mutation` injects a defect into the matching oracle.
pub fn run_suites(seed: u64, mutation: Option<Mutation>) -> Vec<SuiteResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    vec![
        jacobian_suite(&mut rng),
        distance_gradient_suite(&mut rng),
        mass_matrix_suite(&mut rng),
        gravity_suite(&mut rng, mutation),
        passivity_suite(&mut rng),
        dynamics_roundtrip_suite(&mut rng),
        projector_suite(&mut rng),
        qp_oracle_suite(&mut rng),
        defect_suite(&mut rng),
    ]
}

pub fn summary(results: &[SuiteResult]) -> String {
    let mut out = String::new();
    for r in results {
        out += &format!(
            "{:<22} {:>5}/{:<5} worst {:.2e} (tol {:.0e})  {}\n",
            r.name,
            r.passed,
            r.total,
            r.worst,
            r.tolerance,
            if r.ok() { "PASS" } else { "FAIL" }
        );
    }
    let failed = results.iter().filter(|r| !r.ok()).count();
    out += &format!("{} suites, {} failed\n", results.len(), failed);
    out
}
