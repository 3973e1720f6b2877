//! Closed-form distance queries between spheres and capsules.
//!
//! Every primitive is a swept sphere: a core segment (a point for spheres) inflated by a
//! radius. Distances are therefore segment–segment distances minus the radii, which
//! gives exact witness points for every pair. Overlapping shapes report a negative
//! distance; the witnesses are then the deepest points along the core normal.

use nalgebra::{DMatrix, DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::kinematics::point_jacobian;
use crate::model::{forward_kinematics, Pose, RobotModel};

/// Core-segment separation below which the normal is undefined.
pub const DEGENERATE_GAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Shape {
    Sphere { radius: f64 },
    /// Segment `a`–`b` in the primitive's local frame, inflated by `radius`.
    Capsule { radius: f64, a: Vector3<f64>, b: Vector3<f64> },
}

impl Shape {
    pub fn radius(&self) -> f64 {
        match self {
            Shape::Sphere { radius } | Shape::Capsule { radius, .. } => *radius,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.radius() > 0.0) {
            return Err(Error::InvalidPrimitive("radius must be positive".into()));
        }
        if let Shape::Capsule { a, b, .. } = self {
            if (a - b).norm() < 1e-12 {
                return Err(Error::InvalidPrimitive("capsule endpoints coincide".into()));
            }
        }
        Ok(())
    }
}

/// Shape entry of robot and scenario files; boxes are expanded into capsules.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "lowercase")]
pub enum ShapeSpec {
    Sphere { radius: f64 },
    Capsule { radius: f64, a: [f64; 3], b: [f64; 3] },
    Box { half_extents: [f64; 3] },
}

impl ShapeSpec {
    pub fn to_shapes(&self) -> Result<Vec<Shape>> {
        let shapes = match self {
            ShapeSpec::Sphere { radius } => vec![Shape::Sphere { radius: *radius }],
            ShapeSpec::Capsule { radius, a, b } => {
                vec![Shape::Capsule { radius: *radius, a: Vector3::from(*a), b: Vector3::from(*b) }]
            }
            ShapeSpec::Box { half_extents } => decompose_box(&Vector3::from(*half_extents))?,
        };
        for s in &shapes {
            s.validate()?;
        }
        Ok(shapes)
    }

    pub fn from_shape(shape: &Shape) -> Self {
        match shape {
            Shape::Sphere { radius } => ShapeSpec::Sphere { radius: *radius },
            Shape::Capsule { radius, a, b } => ShapeSpec::Capsule { radius: *radius, a: (*a).into(), b: (*b).into() },
        }
    }
}

/// Covers a box with parallel capsules along its longest axis. The capsule radius is
/// the smallest half extent; neighbouring cores are at most one radius apart, so the
/// union contains the box except for rounded edges along the long axis.
pub fn decompose_box(half: &Vector3<f64>) -> Result<Vec<Shape>> {
    if half.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::InvalidPrimitive("box half extents must be positive".into()));
    }
    let mut axes = [0usize, 1, 2];
    axes.sort_by(|&i, &j| half[i].partial_cmp(&half[j]).unwrap().then(i.cmp(&j)));
    let (thin, mid, long) = (axes[0], axes[1], axes[2]);
    let r = half[thin];
    let span_mid = (half[mid] - r).max(0.0);
    let count = if span_mid <= 0.0 { 1 } else { (2.0 * span_mid / r).ceil() as usize + 1 };
    let reach = half[long] - r;
    let mut out = Vec::with_capacity(count);
    for k in 0..count {
        let offset = if count == 1 { 0.0 } else { -span_mid + 2.0 * span_mid * k as f64 / (count - 1) as f64 };
        let mut centre = Vector3::zeros();
        centre[mid] = offset;
        if reach <= 1e-12 {
            out.push(Shape::Capsule {
                radius: r,
                a: centre,
                b: centre + Vector3::from_fn(|i, _| if i == long { 1e-9 } else { 0.0 }),
            });
        } else {
            let mut dir = Vector3::zeros();
            dir[long] = reach;
            out.push(Shape::Capsule { radius: r, a: centre - dir, b: centre + dir });
        }
    }
    Ok(out)
}

/// A shape placed in the world (or in a link frame before composition).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub shape: Shape,
    pub pose: Pose,
}

impl Primitive {
    pub fn sphere(center: Vector3<f64>, radius: f64) -> Self {
        Self { shape: Shape::Sphere { radius }, pose: Pose::from_translation(center) }
    }

    pub fn capsule(a: Vector3<f64>, b: Vector3<f64>, radius: f64) -> Self {
        Self { shape: Shape::Capsule { radius, a, b }, pose: Pose::identity() }
    }

    /// World core segment and radius.
    pub fn core(&self) -> (Vector3<f64>, Vector3<f64>, f64) {
        match &self.shape {
            Shape::Sphere { radius } => (self.pose.translation, self.pose.translation, *radius),
            Shape::Capsule { radius, a, b } => (self.pose.transform_point(a), self.pose.transform_point(b), *radius),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceResult {
    /// Signed surface distance; negative when overlapping.
    pub distance: f64,
    /// Witness point on the robot body (first argument), world frame.
    pub p_a: Vector3<f64>,
    /// Witness point on the obstacle (second argument), world frame.
    pub p_b: Vector3<f64>,
    /// Unit vector from the obstacle towards the robot body.
    pub normal: Vector3<f64>,
    /// False when the core segments intersect and `normal` is a fallback choice.
    pub normal_defined: bool,
    pub link_index: usize,
    pub body_index: usize,
    pub obstacle_index: usize,
}

/// Closest points between segments `p1q1` and `p2q2` (Ericson, RTCD §5.1.9).
fn closest_segment_points(
    p1: &Vector3<f64>,
    q1: &Vector3<f64>,
    p2: &Vector3<f64>,
    q2: &Vector3<f64>,
) -> (Vector3<f64>, Vector3<f64>) {
    const EPS: f64 = 1e-14;
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.dot(&d1);
    let e = d2.dot(&d2);
    let f = d2.dot(&r);
    let (s, t);
    if a <= EPS && e <= EPS {
        return (*p1, *p2);
    }
    if a <= EPS {
        s = 0.0;
        t = (f / e).clamp(0.0, 1.0);
    } else {
        let c = d1.dot(&r);
        if e <= EPS {
            t = 0.0;
            s = (-c / a).clamp(0.0, 1.0);
        } else {
            let b = d1.dot(&d2);
            let denom = a * e - b * b;
            let mut s0 = if denom > EPS * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
            let mut t0 = (b * s0 + f) / e;
            if t0 < 0.0 {
                t0 = 0.0;
                s0 = (-c / a).clamp(0.0, 1.0);
            } else if t0 > 1.0 {
                t0 = 1.0;
                s0 = ((b - c) / a).clamp(0.0, 1.0);
            }
            s = s0;
            t = t0;
        }
    }
    (p1 + d1 * s, p2 + d2 * t)
}

fn fallback_normal(a0: &Vector3<f64>, a1: &Vector3<f64>, b0: &Vector3<f64>, b1: &Vector3<f64>) -> Vector3<f64> {
    let da = a1 - a0;
    let db = b1 - b0;
    let c = da.cross(&db);
    if c.norm() > 1e-12 {
        return c.normalize();
    }
    let d = if da.norm() > 1e-12 { da } else { db };
    if d.norm() > 1e-12 {
        let helper = if d.x.abs() < 0.9 { Vector3::x() } else { Vector3::y() };
        return d.cross(&helper).normalize();
    }
    Vector3::z()
}

/// Signed distance between two world-placed primitives with witness points.
pub fn min_distance(a: &Primitive, b: &Primitive) -> DistanceResult {
    let (a0, a1, ra) = a.core();
    let (b0, b1, rb) = b.core();
    let (ca, cb) = closest_segment_points(&a0, &a1, &b0, &b1);
    let diff = ca - cb;
    let gap = diff.norm();
    let (normal, defined) =
        if gap > DEGENERATE_GAP { (diff / gap, true) } else { (fallback_normal(&a0, &a1, &b0, &b1), false) };
    DistanceResult {
        distance: gap - ra - rb,
        p_a: ca - normal * ra,
        p_b: cb + normal * rb,
        normal,
        normal_defined: defined,
        link_index: 0,
        body_index: 0,
        obstacle_index: 0,
    }
}

/// `∂d/∂q = nᵀ J_A` for a world-fixed obstacle (`J_B = 0`); `result` must have been
/// computed at `q`.
pub fn distance_gradient(model: &RobotModel, q: &DVector<f64>, result: &DistanceResult) -> Result<DVector<f64>> {
    if !result.normal_defined {
        return Err(Error::DegenerateNormal);
    }
    let poses = forward_kinematics(model, q)?;
    let jac = point_jacobian(model, &poses, result.link_index, &result.p_a)?;
    Ok(jac.transpose() * result.normal)
}

/// First-order prediction `d(q) + ∇d · (q_k − q)`.
pub fn linearized_distance(
    result: &DistanceResult,
    gradient: &DVector<f64>,
    q: &DVector<f64>,
    q_k: &DVector<f64>,
) -> Result<f64> {
    if q.len() != q_k.len() || gradient.len() != q.len() {
        return Err(Error::dim("linearization point", q.len(), q_k.len().min(gradient.len())));
    }
    Ok(result.distance + gradient.dot(&(q_k - q)))
}

/// World primitives of every collision body at `q`.
pub fn robot_primitives(model: &RobotModel, q: &DVector<f64>) -> Result<Vec<Primitive>> {
    let poses = forward_kinematics(model, q)?;
    Ok(model
        .collision_bodies
        .iter()
        .map(|b| Primitive { shape: b.shape.clone(), pose: poses[b.link] * b.origin })
        .collect())
}

/// Distances for every (collision body, obstacle) pair, body-major order.
pub fn all_pairs(model: &RobotModel, q: &DVector<f64>, obstacles: &[Primitive]) -> Result<Vec<DistanceResult>> {
    let bodies = robot_primitives(model, q)?;
    let mut out = Vec::with_capacity(bodies.len() * obstacles.len());
    for (bi, (prim, body)) in bodies.iter().zip(&model.collision_bodies).enumerate() {
        for (oi, obs) in obstacles.iter().enumerate() {
            let mut r = min_distance(prim, obs);
            r.link_index = body.link;
            r.body_index = bi;
            r.obstacle_index = oi;
            out.push(r);
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Default)]
pub struct LinkDistances {
    /// Closest obstacle per collision body, ordered by (link, body).
    pub results: Vec<DistanceResult>,
    /// Index into `results` of the global minimum.
    pub global_min: Option<usize>,
}

impl LinkDistances {
    pub fn min(&self) -> Option<&DistanceResult> {
        self.global_min.map(|i| &self.results[i])
    }
}

/// Closest obstacle for each collision body. Ties go to the lower obstacle index, and
/// the global minimum to the lowest (link, obstacle) pair.
pub fn closest_pair_per_link(model: &RobotModel, q: &DVector<f64>, obstacles: &[Primitive]) -> Result<LinkDistances> {
    if obstacles.is_empty() {
        model.check_q("joint positions", q)?;
        return Ok(LinkDistances::default());
    }
    let pairs = all_pairs(model, q, obstacles)?;
    let mut results: Vec<DistanceResult> = Vec::new();
    for chunk in pairs.chunks(obstacles.len()) {
        let best = chunk
            .iter()
            .fold(None::<&DistanceResult>, |acc, r| match acc {
                Some(b) if b.distance <= r.distance => Some(b),
                _ => Some(r),
            })
            .expect("non-empty chunk");
        results.push(best.clone());
    }
    results.sort_by(|a, b| (a.link_index, a.body_index).cmp(&(b.link_index, b.body_index)));
    let mut global_min = None;
    for (i, r) in results.iter().enumerate() {
        let better = match global_min {
            None => true,
            Some(g) => {
                let cur: &DistanceResult = &results[g];
                r.distance < cur.distance
                    || (r.distance == cur.distance
                        && (r.link_index, r.obstacle_index) < (cur.link_index, cur.obstacle_index))
            }
        };
        if better {
            global_min = Some(i);
        }
    }
    Ok(LinkDistances { results, global_min })
}

/// Row-stacked gradients of several results (one row each).
pub fn gradient_matrix(model: &RobotModel, q: &DVector<f64>, results: &[DistanceResult]) -> Result<DMatrix<f64>> {
    let mut m = DMatrix::zeros(results.len(), model.dof());
    for (i, r) in results.iter().enumerate() {
        m.set_row(i, &distance_gradient(model, q, r)?.transpose());
    }
    Ok(m)
}
