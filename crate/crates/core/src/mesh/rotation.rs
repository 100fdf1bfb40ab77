//! Axis-angle (Rodrigues) rotations with analytic derivatives.
//!
//! `R(r) = I + a(θ)[r]× + b(θ)[r]×²` with `θ = |r|`, `a = sin θ / θ` and
//! `b = (1 - cos θ) / θ²`. The coefficient functions switch to their series
//! expansions near zero so both the matrix and its Jacobian stay smooth
//! through `r = 0`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

/// Below this angle the rotation uses the second-order expansion `I + [r] + [r]²/2`.
pub const SMALL_ANGLE: f64 = 1e-8;
const SERIES_ANGLE: f64 = 1e-2;

/// Axis times angle, in radians.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RodriguesVector(pub Vector3<f64>);

impl RodriguesVector {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self(Vector3::new(x, y, z))
    }

    pub fn to_matrix(&self) -> Matrix3<f64> {
        rodrigues_to_matrix(&self.0)
    }

    pub fn angle(&self) -> f64 {
        self.0.norm()
    }
}

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

struct Coefficients {
    a: f64,
    b: f64,
    // a'(θ)/θ and b'(θ)/θ
    da: f64,
    db: f64,
}

fn coefficients(theta: f64) -> Coefficients {
    if theta < SMALL_ANGLE {
        Coefficients {
            a: 1.0,
            b: 0.5,
            da: -1.0 / 3.0,
            db: -1.0 / 12.0,
        }
    } else if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        Coefficients {
            a: 1.0 - t2 / 6.0 + t4 / 120.0,
            b: 0.5 - t2 / 24.0 + t4 / 720.0,
            da: -1.0 / 3.0 + t2 / 30.0 - t4 / 840.0,
            db: -1.0 / 12.0 + t2 / 180.0 - t4 / 6720.0,
        }
    } else {
        let (s, c) = theta.sin_cos();
        let half = (0.5 * theta).sin();
        let one_minus_cos = 2.0 * half * half;
        let t2 = theta * theta;
        Coefficients {
            a: s / theta,
            b: one_minus_cos / t2,
            da: (theta * c - s) / (t2 * theta),
            db: (theta * s - 2.0 * one_minus_cos) / (t2 * t2),
        }
    }
}

pub fn rodrigues_to_matrix(r: &Vector3<f64>) -> Matrix3<f64> {
    let k = coefficients(r.norm());
    let s = skew(r);
    Matrix3::identity() + s * k.a + s * s * k.b
}

/// Rotation matrix together with `∂R/∂r_m` for `m = 0, 1, 2`.
pub fn rodrigues_with_jacobian(r: &Vector3<f64>) -> (Matrix3<f64>, [Matrix3<f64>; 3]) {
    let k = coefficients(r.norm());
    let s = skew(r);
    let s2 = s * s;
    let rot = Matrix3::identity() + s * k.a + s2 * k.b;
    let jac = std::array::from_fn(|m| {
        let e = skew(&Vector3::ith(m, 1.0));
        e * k.a + (e * s + s * e) * k.b + s * (k.da * r[m]) + s2 * (k.db * r[m])
    });
    (rot, jac)
}

/// `dE/dr` from `dE/dR` given the rotation Jacobian.
pub fn contract(jac: &[Matrix3<f64>; 3], grad_rot: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        jac[0].component_mul(grad_rot).sum(),
        jac[1].component_mul(grad_rot).sum(),
        jac[2].component_mul(grad_rot).sum(),
    )
}

fn vee_antisymmetric(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    ) * 0.5
}

/// Inverse of [`rodrigues_to_matrix`] for rotation angles in `[0, π]`.
pub fn matrix_to_rodrigues(rot: &Matrix3<f64>) -> Vector3<f64> {
    let v = vee_antisymmetric(rot);
    let s = v.norm();
    let c = 0.5 * (rot.trace() - 1.0);
    let theta = s.atan2(c);
    if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        return v * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0);
    }
    if s > 1e-6 {
        return v * (theta / s);
    }
    // Near π the antisymmetric part vanishes; recover the axis from R + I.
    let b = (rot + Matrix3::identity()) * 0.5;
    let mut col = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(col, col)] {
            col = i;
        }
    }
    let mut axis: Vector3<f64> = b.column(col).into();
    axis /= axis.norm();
    if axis.dot(&v) < 0.0 {
        axis = -axis;
    }
    axis * theta
}

/// Pull a gradient on `matrix_to_rodrigues(R)` back to a gradient on `R`.
///
/// Valid away from θ = π.
pub fn matrix_to_rodrigues_backward(rot: &Matrix3<f64>, grad: &Vector3<f64>) -> Matrix3<f64> {
    let v = vee_antisymmetric(rot);
    let s = v.norm();
    let c = 0.5 * (rot.trace() - 1.0);
    let theta = s.atan2(c);
    let norm2 = s * s + c * c;
    // f = θ / sin θ and h = f'(θ) / sin θ
    let (f, h) = if theta < SERIES_ANGLE {
        let t2 = theta * theta;
        (
            1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0,
            1.0 / 3.0 + 2.0 * t2 / 15.0,
        )
    } else {
        let (st, ct) = theta.sin_cos();
        (theta / st, (st - theta * ct) / (st * st * st))
    };
    let vg = v.dot(grad);
    let grad_v = grad * f + v * (h * c * vg / norm2);
    let grad_c = -h * s * s * vg / norm2;

    let mut g = Matrix3::from_diagonal_element(0.5 * grad_c);
    g[(2, 1)] += 0.5 * grad_v.x;
    g[(1, 2)] -= 0.5 * grad_v.x;
    g[(0, 2)] += 0.5 * grad_v.y;
    g[(2, 0)] -= 0.5 * grad_v.y;
    g[(1, 0)] += 0.5 * grad_v.z;
    g[(0, 1)] -= 0.5 * grad_v.z;
    g
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;
    use proptest::prelude::*;

    fn quaternion_oracle(r: &Vector3<f64>) -> Matrix3<f64> {
        // Built from the half-angle quaternion directly, not via axis-angle helpers.
        let theta = r.norm();
        if theta == 0.0 {
            return Matrix3::identity();
        }
        let axis = r / theta;
        let (s, c) = (0.5 * theta).sin_cos();
        let q = nalgebra::Quaternion::new(c, axis.x * s, axis.y * s, axis.z * s);
        UnitQuaternion::from_quaternion(q)
            .to_rotation_matrix()
            .into_inner()
    }

    #[test]
    fn zero_is_identity() {
        assert_eq!(rodrigues_to_matrix(&Vector3::zeros()), Matrix3::identity());
    }

    #[test]
    fn quarter_turn_about_z_maps_x_to_y() {
        let r = rodrigues_to_matrix(&Vector3::new(0.0, 0.0, std::f64::consts::FRAC_PI_2));
        let y = r * Vector3::x();
        assert_relative_eq!(y, Vector3::y(), epsilon = 1e-15);
    }

    #[test]
    fn matches_quaternion_path() {
        let r = Vector3::new(0.3, -0.2, 0.9);
        let m = rodrigues_to_matrix(&r);
        assert_relative_eq!(m, quaternion_oracle(&r), epsilon = 1e-12);
        assert_relative_eq!(m.transpose() * m, Matrix3::identity(), epsilon = 1e-12);
        assert_relative_eq!(m.determinant(), 1.0, epsilon = 1e-12);
    }

    fn jacobian_fd(r: Vector3<f64>) -> f64 {
        let (_, jac) = rodrigues_with_jacobian(&r);
        let eps = 1e-6;
        let mut worst: f64 = 0.0;
        for m in 0..3 {
            let mut rp = r;
            rp[m] += eps;
            let mut rm = r;
            rm[m] -= eps;
            let fd = (rodrigues_to_matrix(&rp) - rodrigues_to_matrix(&rm)) / (2.0 * eps);
            worst = worst.max((fd - jac[m]).amax());
        }
        worst
    }

    #[test]
    fn jacobian_is_smooth_through_zero() {
        for r in [
            Vector3::zeros(),
            Vector3::new(1e-9, -2e-9, 0.0),
            Vector3::new(3e-4, 1e-4, -2e-4),
            Vector3::new(5e-3, 0.0, 5e-3),
            Vector3::new(0.4, -1.2, 0.7),
        ] {
            assert!(jacobian_fd(r) < 1e-8, "r = {r:?}");
        }
    }

    #[test]
    fn log_inverts_exp() {
        for r in [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1e-5, 2e-5, -1e-5),
            Vector3::new(0.3, -0.2, 0.9),
            Vector3::new(0.0, 3.0, 0.0),
            Vector3::new(0.0, 0.0, std::f64::consts::PI),
        ] {
            let back = matrix_to_rodrigues(&rodrigues_to_matrix(&r));
            assert_relative_eq!(back, r, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_backward_matches_finite_differences() {
        let grad = Vector3::new(0.7, -0.3, 1.1);
        for r0 in [
            Vector3::new(0.2, 0.1, -0.4),
            Vector3::new(1e-4, -3e-4, 2e-4),
            Vector3::new(1.5, 0.3, 0.2),
        ] {
            let objective =
                |r: &Vector3<f64>| grad.dot(&matrix_to_rodrigues(&rodrigues_to_matrix(r)));
            let (rot, jac) = rodrigues_with_jacobian(&r0);
            let analytic = contract(&jac, &matrix_to_rodrigues_backward(&rot, &grad));
            for m in 0..3 {
                let eps = 1e-6;
                let mut rp = r0;
                rp[m] += eps;
                let mut rm = r0;
                rm[m] -= eps;
                let fd = (objective(&rp) - objective(&rm)) / (2.0 * eps);
                assert!(
                    (fd - analytic[m]).abs() < 1e-7,
                    "{r0:?} m={m}: {fd} vs {}",
                    analytic[m]
                );
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn always_a_proper_rotation(x in -4.0..4.0f64, y in -4.0..4.0f64, z in -4.0..4.0f64) {
            let m = rodrigues_to_matrix(&Vector3::new(x, y, z));
            prop_assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-9);
            prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
        }
    }
}
