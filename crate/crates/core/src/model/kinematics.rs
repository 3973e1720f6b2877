use nalgebra::{DMatrix, DVector, Vector3};

use super::pose::Pose;
use super::RobotModel;
use crate::error::{Error, Result};

/// Undamped pseudo-inverse is refused below this singular value.
pub const RANK_TOL: f64 = 1e-10;
/// [`pseudo_inverse_auto`] switches to damped least squares below this singular value.
pub const AUTO_DAMPING_THRESHOLD: f64 = 1e-4;
/// Damping used by [`pseudo_inverse_auto`].
pub const AUTO_DAMPING: f64 = 1e-6;

/// Reference frame for a Jacobian query.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Frame {
    /// Origin of the joint frame `i`, moving with link `i`.
    Link(usize),
    EndEffector,
    /// A world point rigidly attached to link `link` at the current configuration.
    Point { link: usize, point: Vector3<f64> },
}

/// World poses of every joint frame followed by the end-effector pose (`n + 1` entries).
pub fn forward_kinematics(model: &RobotModel, q: &DVector<f64>) -> Result<Vec<Pose>> {
    model.check_q("joint positions", q)?;
    if q.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidModel("non-finite joint position".into()));
    }
    let mut poses = Vec::with_capacity(model.dof() + 1);
    let mut current = Pose::identity();
    for (joint, &qi) in model.joints.iter().zip(q.iter()) {
        current = current * joint.origin * Pose::from_axis_angle(&joint.axis, qi);
        poses.push(current);
    }
    poses.push(current * model.ee_frame);
    Ok(poses)
}

/// World axis and a world point on the axis for each joint.
pub(crate) fn joint_axes(model: &RobotModel, poses: &[Pose]) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    model
        .joints
        .iter()
        .zip(poses.iter())
        .map(|(j, p)| (p.rotation * j.axis, p.translation))
        .collect()
}

/// Geometric Jacobian of `frame`, 6×n with angular rows first. The linear rows give
/// the world velocity of the frame's reference point; all rows are world-aligned.
pub fn geometric_jacobian(model: &RobotModel, q: &DVector<f64>, frame: Frame) -> Result<DMatrix<f64>> {
    let poses = forward_kinematics(model, q)?;
    jacobian_from_poses(model, &poses, frame)
}

pub(crate) fn jacobian_from_poses(model: &RobotModel, poses: &[Pose], frame: Frame) -> Result<DMatrix<f64>> {
    let n = model.dof();
    let (last, point) = match frame {
        Frame::Link(i) => {
            if i >= n {
                return Err(Error::InvalidFrame { index: i, count: n });
            }
            (i, poses[i].translation)
        }
        Frame::EndEffector => (n - 1, poses[n].translation),
        Frame::Point { link, point } => {
            if link >= n {
                return Err(Error::InvalidFrame { index: link, count: n });
            }
            (link, point)
        }
    };
    let axes = joint_axes(model, poses);
    let mut jac = DMatrix::zeros(6, n);
    for (j, (z, o)) in axes.iter().enumerate().take(last + 1) {
        let lin = z.cross(&(point - o));
        jac.fixed_view_mut::<3, 1>(0, j).copy_from(z);
        jac.fixed_view_mut::<3, 1>(3, j).copy_from(&lin);
    }
    Ok(jac)
}

/// 3×n translational Jacobian of a world point attached to `link`.
pub fn point_jacobian(model: &RobotModel, poses: &[Pose], link: usize, point: &Vector3<f64>) -> Result<DMatrix<f64>> {
    let j = jacobian_from_poses(model, poses, Frame::Point { link, point: *point })?;
    Ok(j.rows(3, 3).into_owned())
}

/// Pseudo-inverse `Jᵀ(JJᵀ + σ²I)⁻¹` computed through the SVD.
///
/// With `damping == 0` the Moore–Penrose inverse is returned and a smallest singular
/// value below [`RANK_TOL`] is reported as [`Error::RankDeficient`].
pub fn pseudo_inverse(j: &DMatrix<f64>, damping: f64) -> Result<DMatrix<f64>> {
    let (m, n) = j.shape();
    let svd = j.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd u");
    let vt = svd.v_t.as_ref().expect("svd v_t");
    let sigma = &svd.singular_values;
    let smin = sigma.iter().cloned().fold(f64::INFINITY, f64::min);
    if damping == 0.0 && smin < RANK_TOL {
        return Err(Error::RankDeficient(smin));
    }
    let k = sigma.len();
    let mut out = DMatrix::zeros(n, m);
    for i in 0..k {
        let s = sigma[i];
        let factor = if damping == 0.0 { 1.0 / s } else { s / (s * s + damping * damping) };
        if factor == 0.0 {
            continue;
        }
        out += vt.row(i).transpose() * u.column(i).transpose() * factor;
    }
    Ok(out)
}

/// Pseudo-inverse that switches to damped least squares ([`AUTO_DAMPING`]) when the
/// smallest singular value drops below [`AUTO_DAMPING_THRESHOLD`]. Never fails.
pub fn pseudo_inverse_auto(j: &DMatrix<f64>) -> DMatrix<f64> {
    let smin = j.singular_values().iter().cloned().fold(f64::INFINITY, f64::min);
    let damping = if smin < AUTO_DAMPING_THRESHOLD { AUTO_DAMPING } else { 0.0 };
    if damping > 0.0 {
        log::debug!("pseudo-inverse damped (smallest singular value {smin:e})");
    }
    pseudo_inverse(j, damping).expect("damped pseudo-inverse is always defined")
}

/// Null-space projector `I − J̄J` from the undamped pseudo-inverse.
pub fn null_projector(j: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let pinv = pseudo_inverse(j, 0.0)?;
    Ok(DMatrix::identity(j.ncols(), j.ncols()) - pinv * j)
}

/// Null-space projector using [`pseudo_inverse_auto`]; near singularities it is only
/// approximately idempotent.
pub fn null_projector_auto(j: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::identity(j.ncols(), j.ncols()) - pseudo_inverse_auto(j) * j
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{panda_like, planar_2r};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn dv(v: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(v)
    }

    #[test]
    fn planar_2r_end_effector() {
        let m = planar_2r(1.0, 1.0, 1.0, 1.0);
        let ee = forward_kinematics(&m, &dv(&[0.0, 0.0])).unwrap()[2];
        assert_relative_eq!(ee.translation, Vector3::new(2.0, 0.0, 0.0), epsilon = 1e-12);
        let ee = forward_kinematics(&m, &dv(&[FRAC_PI_2, 0.0])).unwrap()[2];
        assert_relative_eq!(ee.translation, Vector3::new(0.0, 2.0, 0.0), epsilon = 1e-12);
    }

    #[test]
    fn wrong_length_is_rejected() {
        let m = planar_2r(1.0, 1.0, 1.0, 1.0);
        assert!(matches!(forward_kinematics(&m, &dv(&[0.0])), Err(Error::Dimension { .. })));
    }

    #[test]
    fn poses_stay_in_so3() {
        let m = panda_like();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let q = DVector::from_fn(7, |_, _| rng.random_range(-2.5..2.5));
            for p in forward_kinematics(&m, &q).unwrap() {
                assert!(p.is_valid(1e-9));
            }
        }
    }

    #[test]
    fn planar_2r_linear_jacobian() {
        let m = planar_2r(1.0, 1.0, 1.0, 1.0);
        let j = geometric_jacobian(&m, &dv(&[0.0, 0.0]), Frame::EndEffector).unwrap();
        // x, y, z rows of the linear block
        assert_relative_eq!(j[(3, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(j[(4, 0)], 2.0, epsilon = 1e-12);
        assert_relative_eq!(j[(4, 1)], 1.0, epsilon = 1e-12);
        assert_relative_eq!(j[(5, 1)], 0.0, epsilon = 1e-12);
        // angular rows: both joints about z
        assert_relative_eq!(j[(2, 0)], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn downstream_columns_are_zero() {
        let m = panda_like();
        let q = DVector::from_element(7, 0.3);
        let j = geometric_jacobian(&m, &q, Frame::Link(3)).unwrap();
        for c in 4..7 {
            assert_eq!(j.column(c).norm(), 0.0);
        }
        assert!(matches!(geometric_jacobian(&m, &q, Frame::Link(7)), Err(Error::InvalidFrame { .. })));
    }

    #[test]
    fn zero_velocity_gives_zero_twist() {
        let m = panda_like();
        let j = geometric_jacobian(&m, &DVector::from_element(7, 0.2), Frame::EndEffector).unwrap();
        assert_eq!((j * DVector::zeros(7)).norm(), 0.0);
    }

    #[test]
    fn pinv_of_selector() {
        let mut j = DMatrix::zeros(3, 6);
        j.view_mut((0, 0), (3, 3)).fill_with_identity();
        let p = pseudo_inverse(&j, 0.0).unwrap();
        assert_relative_eq!(p, j.transpose(), epsilon = 1e-12);
    }

    #[test]
    fn pinv_of_square_is_inverse() {
        let j = DMatrix::from_row_slice(3, 3, &[2.0, 1.0, 0.0, 0.5, 3.0, 1.0, 0.0, -1.0, 4.0]);
        let p = pseudo_inverse(&j, 0.0).unwrap();
        assert_relative_eq!(p, j.clone().try_inverse().unwrap(), epsilon = 1e-9);
    }

    #[test]
    fn undamped_pinv_reports_rank_deficiency() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(matches!(pseudo_inverse(&j, 0.0), Err(Error::RankDeficient(_))));
        let d = pseudo_inverse(&j, 1e-3).unwrap();
        assert!(d.iter().all(|v| v.is_finite()));
        assert!(matches!(null_projector(&j), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn damped_pinv_matches_closed_form() {
        let j = DMatrix::from_row_slice(2, 3, &[1.0, 0.2, -0.3, 0.4, 1.5, 0.1]);
        let s = 0.3;
        let closed = j.transpose() * (&j * j.transpose() + DMatrix::identity(2, 2) * s * s).try_inverse().unwrap();
        assert_relative_eq!(pseudo_inverse(&j, s).unwrap(), closed, epsilon = 1e-12);
    }

    #[test]
    fn projector_examples() {
        let j = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        assert_relative_eq!(null_projector(&j).unwrap(), DMatrix::from_diagonal(&dv(&[0.0, 1.0])), epsilon = 1e-12);
        let sq = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, -1.0, 0.5]);
        assert!(null_projector(&sq).unwrap().abs().max() < 1e-12);
    }
}
