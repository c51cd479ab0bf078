//! SE(3) exponential/logarithm maps and Jacobians.
//!
//! Twists are ordered `[ρ; φ]` (translational part first). `exp` maps a twist
//! to a transform whose rotation is `exp(φ^)` and translation `J_l(φ)·ρ`.

use nalgebra::{Matrix3, Matrix6, UnitQuaternion, Vector3, Vector6};

use super::RigidTransform;

const SMALL_ANGLE: f64 = 1e-2;

pub type Twist = Vector6<f64>;

pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// SO(3) left Jacobian.
pub fn so3_left_jacobian(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let (a, b) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
    } else {
        let t2 = theta * theta;
        ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}

pub fn so3_left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = hat(phi);
    let c = if theta < SMALL_ANGLE {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * c
}

fn q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let p = hat(phi);
    let r = hat(rho);
    let (c1, c2, c3) = if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 / 6.0 - t2 / 120.0, 1.0 / 24.0 - t2 / 720.0, 1.0 / 120.0 - t2 / 2520.0)
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            (theta - s) / (t2 * theta),
            (t2 + 2.0 * c - 2.0) / (2.0 * t4),
            (2.0 * theta - 3.0 * s + theta * c) / (2.0 * t4 * theta),
        )
    };
    let pr = p * r;
    let rp = r * p;
    let prp = pr * p;
    r * 0.5 + (pr + rp + prp) * c1 + (p * pr + rp * p - prp * 3.0) * c2 + (prp * p + p * prp) * c3
}

/// SE(3) left Jacobian of a twist.
pub fn se3_left_jacobian(xi: &Twist) -> Matrix6<f64> {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let j = so3_left_jacobian(&phi);
    let q = q_block(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&q);
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j);
    out
}

pub fn se3_left_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let j_inv = so3_left_jacobian_inv(&phi);
    let q = q_block(&rho, &phi);
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&j_inv);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(-j_inv * q * j_inv));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&j_inv);
    out
}

/// Inverse of the right Jacobian, `J_r⁻¹(ξ) = J_l⁻¹(−ξ)`.
pub fn se3_right_jacobian_inv(xi: &Twist) -> Matrix6<f64> {
    se3_left_jacobian_inv(&(-xi))
}

pub fn exp(xi: &Twist) -> RigidTransform {
    let rho = xi.fixed_rows::<3>(0).into_owned();
    let phi = xi.fixed_rows::<3>(3).into_owned();
    let rot = UnitQuaternion::from_scaled_axis(phi);
    RigidTransform::new(rot, so3_left_jacobian(&phi) * rho)
}

pub fn log(t: &RigidTransform) -> Twist {
    let phi = t.rotation().scaled_axis();
    let rho = so3_left_jacobian_inv(&phi) * t.translation();
    let mut xi = Twist::zeros();
    xi.fixed_rows_mut::<3>(0).copy_from(&rho);
    xi.fixed_rows_mut::<3>(3).copy_from(&phi);
    xi
}

/// Adjoint of `t` acting on `[ρ; φ]` twists: `t·exp(ξ)·t⁻¹ = exp(Ad_t ξ)`.
pub fn adjoint(t: &RigidTransform) -> Matrix6<f64> {
    let r = t.rotation_matrix();
    let tr = t.translation();
    let mut out = Matrix6::zeros();
    out.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    out.fixed_view_mut::<3, 3>(0, 3).copy_from(&(hat(&tr) * r));
    out.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn twist(v: [f64; 6]) -> Twist {
        Twist::from_row_slice(&v)
    }

    #[test]
    fn exp_log_round_trip() {
        for v in [
            [0.1, -0.2, 0.3, 0.4, -0.5, 0.6],
            [1.0, 2.0, 3.0, 1e-4, 2e-4, -1e-4],
            [0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [0.5, 0.5, 0.5, 0.0, 2.9, 0.0],
        ] {
            let xi = twist(v);
            let back = log(&exp(&xi));
            assert!((back - xi).norm() < 1e-10, "{v:?} -> {back:?}");
        }
    }

    #[test]
    fn adjoint_conjugation() {
        let t = exp(&twist([0.3, -0.1, 0.7, 0.2, 0.5, -0.4]));
        let xi = twist([0.05, 0.02, -0.01, 0.03, -0.02, 0.01]);
        let lhs = t.compose(&exp(&xi)).compose(&t.inverse());
        let rhs = exp(&(adjoint(&t) * xi));
        let (dt, dr) = lhs.distance_to(&rhs);
        assert!(dt < 1e-12 && dr < 1e-12);
    }

    #[test]
    fn left_jacobian_inverse_matches_matrix_inverse() {
        for v in [[0.3, -0.1, 0.7, 0.2, 0.5, -0.4], [0.3, -0.1, 0.7, 1e-3, 2e-3, 0.0]] {
            let xi = twist(v);
            let prod = se3_left_jacobian(&xi) * se3_left_jacobian_inv(&xi);
            assert!((prod - Matrix6::identity()).norm() < 1e-10);
        }
    }

    #[test]
    fn left_jacobian_matches_finite_differences() {
        // exp(ξ + δ) ≈ exp(J_l(ξ) δ) · exp(ξ)
        let xi = twist([0.3, -0.1, 0.7, 0.2, 0.5, -0.4]);
        let jl = se3_left_jacobian(&xi);
        let base = exp(&xi);
        let h = 1e-6;
        for k in 0..6 {
            let mut d = Twist::zeros();
            d[k] = h;
            let plus = exp(&(xi + d)).compose(&base.inverse());
            let mut e = Twist::zeros();
            e[k] = -h;
            let minus = exp(&(xi + e)).compose(&base.inverse());
            let col = (log(&plus) - log(&minus)) / (2.0 * h);
            assert!((col - jl.column(k)).norm() < 1e-7, "column {k}");
        }
    }
}
