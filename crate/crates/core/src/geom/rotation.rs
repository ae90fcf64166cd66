use nalgebra::{Matrix3, Vector3};
use rand::Rng;
use std::ops::Mul;

/// A 3x3 rotation matrix, kept orthonormal with determinant +1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Matrix3::identity())
    }

    /// Wraps a matrix that is already orthonormal. Validity is the caller's
    /// responsibility; use [`Rotation::nearest`] for noisy inputs.
    pub fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Rotation(m)
    }

    /// Projects an arbitrary matrix onto SO(3) via SVD (nearest rotation in
    /// the Frobenius sense).
    pub fn nearest(m: &Matrix3<f64>) -> Self {
        let svd = m.svd(true, true);
        let u = svd.u.unwrap();
        let v_t = svd.v_t.unwrap();
        let mut r = u * v_t;
        if r.determinant() < 0.0 {
            let mut u = u;
            u.column_mut(2).neg_mut();
            r = u * v_t;
        }
        Rotation(r)
    }

    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Self {
        so3_exp(&(axis.normalize() * angle))
    }

    /// Uniformly distributed random rotation (via a random unit quaternion).
    pub fn random(rng: &mut impl Rng) -> Self {
        use rand_distr::StandardNormal;
        let q: [f64; 4] = [
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        ];
        let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
        let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
        Rotation(quaternion_to_matrix(w, x, y, z))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    /// Rotates a vector.
    pub fn apply(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0 * v
    }

    /// Rotates by the inverse, `R^T v`.
    pub fn apply_inverse(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.0.transpose() * v
    }

    /// Geodesic angle to another rotation, in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        so3_log(&Rotation(self.0.transpose() * other.0)).norm()
    }

    /// Max deviation from orthonormality and unit determinant.
    pub fn orthonormality_error(&self) -> f64 {
        let e = (self.0.transpose() * self.0 - Matrix3::identity()).norm();
        e.max((self.0.determinant() - 1.0).abs())
    }
}

impl Mul for Rotation {
    type Output = Rotation;
    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

fn quaternion_to_matrix(w: f64, x: f64, y: f64, z: f64) -> Matrix3<f64> {
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Skew-symmetric cross-product matrix, `skew(a) * b == a x b`.
pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)])
}

/// Exponential map so(3) -> SO(3) (Rodrigues formula), exact at zero.
pub fn so3_exp(omega: &Vector3<f64>) -> Rotation {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let (a, b) = if theta < 1e-4 {
        // sin(t)/t and (1-cos(t))/t^2 by series.
        (
            1.0 - theta_sq / 6.0 + theta_sq * theta_sq / 120.0,
            0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta_sq)
    };
    let k = skew(omega);
    Rotation(Matrix3::identity() + k * a + k * k * b)
}

/// Logarithm map SO(3) -> so(3); returns the axis-angle vector with
/// `norm <= pi`.
///
/// Near angle pi the axis is recovered from the largest diagonal element of
/// `R + I` (ties broken by lowest index) and its sign is made deterministic,
/// so the map is reproducible for half-turn rotations.
pub fn so3_log(r: &Rotation) -> Vector3<f64> {
    let m = r.matrix();
    let cos = (m.trace() - 1.0) * 0.5;
    let v = vee(m); // 2 sin(angle) * axis

    // atan2 keeps full precision near angle pi, where acos(cos) loses half
    // the significant digits.
    let sin = v.norm() * 0.5;
    let angle = sin.atan2(cos);
    if cos > 0.0 || sin > 1e-6 {
        let factor = if angle < 1e-4 {
            // angle / (2 sin(angle)) by series.
            0.5 + angle * angle / 12.0 + angle.powi(4) * 7.0 / 720.0
        } else {
            angle / (2.0 * angle.sin())
        };
        return v * factor;
    }

    // Angle at or near pi: vee(R - R^T) is unusable, take the axis from
    // R + I = 2 a a^T + O(pi - angle).
    let b = m + Matrix3::identity();
    let mut k = 0;
    for i in 1..3 {
        if b[(i, i)] > b[(k, k)] {
            k = i;
        }
    }
    let mut axis = b.column(k).into_owned();
    let n = axis.norm();
    if n < 1e-12 {
        // Degenerate input; fall back to a fixed axis.
        return Vector3::new(angle, 0.0, 0.0);
    }
    axis /= n;
    // Fix the sign: follow vee(R - R^T) when measurable, otherwise make the
    // dominant component positive.
    let d = v.dot(&axis);
    if d < -1e-12 || (d.abs() <= 1e-12 && axis[k] < 0.0) {
        axis = -axis;
    }
    axis * angle
}

/// Left Jacobian of SO(3): `exp(omega + d) ~= exp(J_l(omega) d) exp(omega)`.
pub fn so3_left_jacobian(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let (b, c) = if theta < 1e-4 {
        (
            0.5 - theta_sq / 24.0 + theta_sq * theta_sq / 720.0,
            1.0 / 6.0 - theta_sq / 120.0 + theta_sq * theta_sq / 5040.0,
        )
    } else {
        (
            (1.0 - theta.cos()) / theta_sq,
            (theta - theta.sin()) / (theta_sq * theta),
        )
    };
    let k = skew(omega);
    Matrix3::identity() + k * b + k * k * c
}

/// Inverse of the SO(3) left Jacobian.
pub fn so3_left_jacobian_inv(omega: &Vector3<f64>) -> Matrix3<f64> {
    let theta_sq = omega.norm_squared();
    let theta = theta_sq.sqrt();
    let c = if theta < 1e-4 {
        1.0 / 12.0 + theta_sq / 720.0 + theta_sq * theta_sq * 7.0 / 302_400.0
    } else {
        (1.0 - theta * (1.0 + theta.cos()) / (2.0 * theta.sin())) / theta_sq
    };
    let k = skew(omega);
    Matrix3::identity() - k * 0.5 + k * k * c
}
