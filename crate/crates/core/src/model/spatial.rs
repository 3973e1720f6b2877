//! World-frame Plücker algebra (angular-first), all quantities about the world origin.

use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

use super::pose::skew;

/// Motion cross product matrix `v×`.
pub fn crm(v: &Vector6<f64>) -> Matrix6<f64> {
    let w = skew(&Vector3::new(v[0], v[1], v[2]));
    let l = skew(&Vector3::new(v[3], v[4], v[5]));
    let mut m = Matrix6::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&w);
    m.fixed_view_mut::<3, 3>(3, 0).copy_from(&l);
    m.fixed_view_mut::<3, 3>(3, 3).copy_from(&w);
    m
}

/// Force cross product matrix `v×* = −(v×)ᵀ`.
pub fn crf(v: &Vector6<f64>) -> Matrix6<f64> {
    -crm(v).transpose()
}

/// Spatial inertia about the world origin of a body with mass `m`, world COM `c`
/// and world-aligned rotational inertia `ic` about the COM.
pub fn spatial_inertia(m: f64, c: &Vector3<f64>, ic: &Matrix3<f64>) -> Matrix6<f64> {
    let cx = skew(c);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&(ic + m * cx * cx.transpose()));
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(m * cx));
    out.fixed_view_mut::<3, 3>(3, 0).copy_from(&(m * cx.transpose()));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&(Matrix3::identity() * m));
    out
}

/// Unit motion of a revolute joint with world axis `z` through world point `o`.
pub fn revolute_motion(z: &Vector3<f64>, o: &Vector3<f64>) -> Vector6<f64> {
    let lin = o.cross(z);
    Vector6::new(z.x, z.y, z.z, lin.x, lin.y, lin.z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn force_cross_is_dual() {
        let v = Vector6::new(0.1, -0.4, 0.3, 1.0, 2.0, -1.0);
        let m = Vector6::new(0.5, 0.2, -0.3, 0.7, -1.1, 0.9);
        let f = Vector6::new(-0.2, 0.6, 0.1, 0.3, 0.3, -0.8);
        // (v × m) · f == −m · (v ×* f)
        assert_relative_eq!((crm(&v) * m).dot(&f), -(m.dot(&(crf(&v) * f))), epsilon = 1e-12);
    }

    #[test]
    fn inertia_gives_kinetic_energy() {
        let c = Vector3::new(0.3, -0.1, 0.5);
        let ic = Matrix3::from_diagonal(&Vector3::new(0.1, 0.2, 0.3));
        let i6 = spatial_inertia(2.0, &c, &ic);
        let w = Vector3::new(0.2, -0.5, 0.7);
        let v0 = Vector3::new(1.0, 0.0, -0.5);
        let v = Vector6::new(w.x, w.y, w.z, v0.x, v0.y, v0.z);
        let vc = v0 + w.cross(&c);
        let ke = 0.5 * 2.0 * vc.norm_squared() + 0.5 * w.dot(&(ic * w));
        assert_relative_eq!(0.5 * v.dot(&(i6 * v)), ke, epsilon = 1e-12);
    }
}
