//! Planar rigid motions, the contraction onto SO(3), and the plane/sphere
//! charts used to move images onto the sphere.

use std::f64::consts::{PI, TAU};
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Rotation3 = Matrix3<f64>;
pub type SpherePoint = Vector3<f64>;

/// Element (b, R_theta) of SE(2); the angle is kept in [0, 2pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidMotion {
    pub translation: [f64; 2],
    pub angle: f64,
}

fn wrap_angle(a: f64) -> f64 {
    let w = a.rem_euclid(TAU);
    if w >= TAU {
        0.0
    } else {
        w
    }
}

impl RigidMotion {
    pub fn new(translation: [f64; 2], angle: f64) -> Self {
        Self {
            translation,
            angle: wrap_angle(angle),
        }
    }

    pub fn identity() -> Self {
        Self::new([0.0, 0.0], 0.0)
    }

    pub fn rotation(angle: f64) -> Self {
        Self::new([0.0, 0.0], angle)
    }

    pub fn translation(b: [f64; 2]) -> Self {
        Self::new(b, 0.0)
    }

    fn rotate(&self, x: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.angle.sin_cos();
        [c * x[0] - s * x[1], s * x[0] + c * x[1]]
    }

    pub fn act(&self, x: [f64; 2]) -> [f64; 2] {
        let r = self.rotate(x);
        [r[0] + self.translation[0], r[1] + self.translation[1]]
    }

    pub fn inverse(&self) -> Self {
        let (s, c) = self.angle.sin_cos();
        let [b0, b1] = self.translation;
        // -R^T b
        Self::new([-(c * b0 + s * b1), -(-s * b0 + c * b1)], -self.angle)
    }

    pub fn compose(&self, other: &Self) -> Self {
        let rb = self.rotate(other.translation);
        Self::new(
            [self.translation[0] + rb[0], self.translation[1] + rb[1]],
            self.angle + other.angle,
        )
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation[0].hypot(self.translation[1])
    }
}

impl Mul for RigidMotion {
    type Output = RigidMotion;
    fn mul(self, rhs: RigidMotion) -> RigidMotion {
        self.compose(&rhs)
    }
}

/// Rotation about the z axis, i.e. the embedding R -> diag(R, 1).
pub fn z_rotation(angle: f64) -> Rotation3 {
    let (s, c) = angle.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// exp of [[0, 0, x1], [0, 0, x2], [-x1, -x2, 0]] in closed form.
pub fn so3_exp(x: [f64; 2]) -> Rotation3 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let r = r2.sqrt();
    let (a, b) = if r < 1e-4 {
        // Taylor tails of sin(r)/r and (1-cos r)/r^2
        (1.0 - r2 / 6.0 + r2 * r2 / 120.0, 0.5 - r2 / 24.0 + r2 * r2 / 720.0)
    } else {
        (r.sin() / r, (1.0 - r.cos()) / r2)
    };
    let k = Matrix3::new(0.0, 0.0, x[0], 0.0, 0.0, x[1], -x[0], -x[1], 0.0);
    Matrix3::identity() + k * a + k * k * b
}

/// The contraction Psi_lambda(b, R) = exp(b / lambda) * diag(R, 1).
pub fn contract(g: &RigidMotion, lambda: f64) -> Result<Rotation3> {
    if !(lambda > 0.0) {
        return invalid(format!("contraction parameter must be positive, got {lambda}"));
    }
    let b = [g.translation[0] / lambda, g.translation[1] / lambda];
    Ok(so3_exp(b) * z_rotation(g.angle))
}

/// Maps x to exp(x / lambda) applied to the north pole.
pub fn plane_to_sphere(x: [f64; 2], lambda: f64) -> SpherePoint {
    let r = x[0].hypot(x[1]);
    if r == 0.0 {
        return Vector3::new(0.0, 0.0, 1.0);
    }
    let t = r / lambda;
    let s = t.sin() / r;
    Vector3::new(x[0] * s, x[1] * s, t.cos())
}

/// Inverse of [`plane_to_sphere`] on the sphere minus the south pole.
pub fn sphere_to_plane(p: &SpherePoint, lambda: f64) -> Result<[f64; 2]> {
    let rho = p.x.hypot(p.y);
    if rho == 0.0 {
        if p.z < 0.0 {
            return Err(Error::NoPreimage([p.x, p.y, p.z]));
        }
        return Ok([0.0, 0.0]);
    }
    let theta = rho.atan2(p.z);
    let scale = lambda * theta / rho;
    Ok([p.x * scale, p.y * scale])
}

/// Polar and azimuthal angle of a (not necessarily unit) vector.
pub fn to_spherical(p: &SpherePoint) -> (f64, f64) {
    let rho = p.x.hypot(p.y);
    (rho.atan2(p.z), p.y.atan2(p.x))
}

pub fn from_spherical(theta: f64, phi: f64) -> SpherePoint {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    Vector3::new(st * cp, st * sp, ct)
}

fn defect_constant(r1: f64, r2: f64) -> f64 {
    2.0 * (r1 + r2).exp() - r1.exp() - r2.exp() - r1 - r2
}

/// Upper bound on ||Psi(g1 g2) - Psi(g1) Psi(g2)|| for translations of norm r1, r2.
pub fn homomorphism_defect_bound(r1: f64, r2: f64, lambda: f64) -> Result<f64> {
    if !(lambda >= 1.0) {
        return invalid(format!("bound requires lambda >= 1, got {lambda}"));
    }
    if !(r1 >= 0.0 && r2 >= 0.0) {
        return invalid("translation norms must be non-negative");
    }
    Ok(defect_constant(r1, r2) / (lambda * lambda))
}

/// Bound on ||kappa(g.f) - Psi(g).kappa(f)||_2 for f supported in the ball of
/// radius lambda*pi, L the Lipschitz constant of kappa_{lambda_tilde} f.
pub fn group_action_bound(lipschitz: f64, b_norm: f64, lambda: f64, lambda_tilde: f64) -> Result<f64> {
    if !(lambda >= 1.0 && lambda_tilde >= lambda) {
        return invalid(format!(
            "bound requires lambda_tilde >= lambda >= 1, got lambda={lambda}, lambda_tilde={lambda_tilde}"
        ));
    }
    if !(lipschitz >= 0.0 && b_norm >= 0.0) {
        return invalid("Lipschitz constant and translation norm must be non-negative");
    }
    let lt2 = lambda_tilde * lambda_tilde;
    let root = (1.0 - (lambda * PI / lambda_tilde).cos()).max(0.0).sqrt();
    Ok(4.0 * lipschitz * PI * (b_norm + lambda * PI).exp() / lt2 * root)
}

/// Frobenius norm of the difference of two 3x3 matrices.
pub fn frobenius_distance(a: &Rotation3, b: &Rotation3) -> f64 {
    (a - b).norm()
}

/// Geodesic angle between two rotations.
pub fn rotation_angle_between(a: &Rotation3, b: &Rotation3) -> f64 {
    let m = a.transpose() * b;
    ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}

pub fn is_rotation(m: &Rotation3, tol: f64) -> bool {
    (m.transpose() * m - Matrix3::identity()).norm() < tol && (m.determinant() - 1.0).abs() < tol
}

/// Rotation exp([w]_x) for a general axis-angle vector.
pub fn axis_angle(w: [f64; 3]) -> Rotation3 {
    let t2 = w[0] * w[0] + w[1] * w[1] + w[2] * w[2];
    let (a, b) = if t2 < 1e-8 {
        (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
    } else {
        let t = t2.sqrt();
        (t.sin() / t, (1.0 - t.cos()) / t2)
    };
    let k = Matrix3::new(0.0, -w[2], w[1], w[2], 0.0, -w[0], -w[1], w[0], 0.0);
    Matrix3::identity() + k * a + k * k * b
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Truncated power series of the matrix exponential, used as an independent reference.
    fn exp_series(k: &Matrix3<f64>) -> Matrix3<f64> {
        let mut term = Matrix3::identity();
        let mut sum = Matrix3::identity();
        for n in 1..60 {
            term = term * k / n as f64;
            sum += term;
        }
        sum
    }

    #[test]
    fn closed_form_exp_matches_series() {
        for &x in &[[0.3, -0.2], [1.0, 2.0], [1e-6, 3e-6], [-2.5, 0.7], [0.0, 0.0]] {
            let k = Matrix3::new(0.0, 0.0, x[0], 0.0, 0.0, x[1], -x[0], -x[1], 0.0);
            let d = (so3_exp(x) - exp_series(&k)).norm();
            assert!(d < 1e-13, "{x:?}: {d}");
        }
    }

    #[test]
    fn identity_contracts_to_identity() {
        let r = contract(&RigidMotion::identity(), 3.0).unwrap();
        assert!((r - Matrix3::identity()).norm() < 1e-15);
    }

    #[test]
    fn pure_translation_maps_pole_to_plane_image() {
        let lambda = 2.0;
        let b = [0.4, -0.9];
        let r = contract(&RigidMotion::translation(b), lambda).unwrap();
        let p = r * Vector3::new(0.0, 0.0, 1.0);
        assert!((p - plane_to_sphere(b, lambda)).norm() < 1e-14);
    }

    #[test]
    fn chart_round_trip() {
        let lambda = 1.5;
        for &x in &[[0.1, 0.2], [-1.0, 2.0], [3.0, -0.5], [0.0, 0.0]] {
            let y = sphere_to_plane(&plane_to_sphere(x, lambda), lambda).unwrap();
            assert!((x[0] - y[0]).abs() < 1e-13 && (x[1] - y[1]).abs() < 1e-13);
        }
        assert!(matches!(
            sphere_to_plane(&Vector3::new(0.0, 0.0, -1.0), 1.0),
            Err(Error::NoPreimage(_))
        ));
    }

    #[test]
    fn small_lambda_rejected() {
        assert!(homomorphism_defect_bound(1.0, 1.0, 0.5).is_err());
        assert!(group_action_bound(1.0, 0.0, 2.0, 1.0).is_err());
        assert!(contract(&RigidMotion::identity(), 0.0).is_err());
    }

    #[test]
    fn defect_constant_vanishes_at_origin() {
        assert_eq!(homomorphism_defect_bound(0.0, 0.0, 1.0).unwrap(), 0.0);
    }

    #[test]
    fn group_action_bound_vanishes_without_contraction_gap() {
        // lambda_tilde -> infinity drives the bound to zero
        let a = group_action_bound(1.0, 0.5, 1.0, 10.0).unwrap();
        let b = group_action_bound(1.0, 0.5, 1.0, 100.0).unwrap();
        assert!(b < a);
    }
}
