use super::rotation::{skew, so3_exp, so3_left_jacobian, so3_left_jacobian_inv, so3_log, Rotation};
use nalgebra::{Matrix3, Matrix6, Vector3, Vector6};

/// SE(3) tangent vector, ordered `[rotation; translation]`.
pub type Twist = Vector6<f64>;

/// World-to-camera rigid transform: `x_cam = R x_world + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: Rotation,
    pub translation: Vector3<f64>,
}

impl Pose {
    pub fn identity() -> Self {
        Pose { rotation: Rotation::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: Rotation, translation: Vector3<f64>) -> Self {
        Pose { rotation, translation }
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.apply(x) + self.translation
    }

    /// Camera center in world coordinates, `c = -R^T t`.
    pub fn center(&self) -> Vector3<f64> {
        -self.rotation.apply_inverse(&self.translation)
    }

    /// Builds the pose looking from a world-space center (t = -R c).
    pub fn from_rotation_center(rotation: Rotation, center: &Vector3<f64>) -> Self {
        let translation = -rotation.apply(center);
        Pose { rotation, translation }
    }

    pub fn inverse(&self) -> Pose {
        let r_inv = self.rotation.transpose();
        Pose { rotation: r_inv, translation: -r_inv.apply(&self.translation) }
    }

    /// `self * other`: applies `other` first, then `self`.
    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }
}

/// SE(3) exponential with the exact translation coupling, so
/// `se3_exp(-d) == se3_exp(d).inverse()`.
pub fn se3_exp(twist: &Twist) -> Pose {
    let omega = twist.fixed_rows::<3>(0).into_owned();
    let v = twist.fixed_rows::<3>(3).into_owned();
    Pose { rotation: so3_exp(&omega), translation: so3_left_jacobian(&omega) * v }
}

/// SE(3) logarithm, inverse of [`se3_exp`].
pub fn se3_log(pose: &Pose) -> Twist {
    let omega = so3_log(&pose.rotation);
    let v = so3_left_jacobian_inv(&omega) * pose.translation;
    let mut twist = Twist::zeros();
    twist.fixed_rows_mut::<3>(0).copy_from(&omega);
    twist.fixed_rows_mut::<3>(3).copy_from(&v);
    twist
}

/// Left-multiplicative pose update, `exp(twist) * base`. A zero twist
/// returns `base` unchanged (bit-identical).
pub fn se3_compose(base: &Pose, twist: &Twist) -> Pose {
    if twist.iter().all(|&c| c == 0.0) {
        return *base;
    }
    se3_exp(twist).compose(base)
}

/// Left Jacobian of the SE(3) exponential for `[rotation; translation]`
/// twist ordering: `exp(twist + d) ~= exp(J_l(twist) d) exp(twist)`.
pub fn se3_left_jacobian(twist: &Twist) -> Matrix6<f64> {
    let omega = twist.fixed_rows::<3>(0).into_owned();
    let v = twist.fixed_rows::<3>(3).into_owned();
    let jl = so3_left_jacobian(&omega);
    let q = se3_q_block(&v, &omega);
    let mut j = Matrix6::zeros();
    j.fixed_view_mut::<3, 3>(0, 0).copy_from(&jl);
    j.fixed_view_mut::<3, 3>(3, 3).copy_from(&jl);
    j.fixed_view_mut::<3, 3>(3, 0).copy_from(&q);
    j
}

/// Coupling block of the SE(3) left Jacobian (Barfoot's Q matrix).
fn se3_q_block(rho: &Vector3<f64>, phi: &Vector3<f64>) -> Matrix3<f64> {
    let rx = skew(rho);
    let px = skew(phi);
    let t_sq = phi.norm_squared();
    let t = t_sq.sqrt();

    let (b, c, e) = if t < 1e-4 {
        (
            1.0 / 6.0 - t_sq / 120.0,
            -1.0 / 24.0 + t_sq / 720.0,
            -1.0 / 120.0 + t_sq / 5040.0,
        )
    } else {
        let (s, co) = (t.sin(), t.cos());
        (
            (t - s) / (t_sq * t),
            (1.0 - t_sq / 2.0 - co) / (t_sq * t_sq),
            (t - s - t_sq * t / 6.0) / (t_sq * t_sq * t),
        )
    };

    let pr = px * rx;
    let rp = rx * px;
    let prp = px * rx * px;
    rx * 0.5
        + (pr + rp + prp) * b
        - (px * pr + rp * px - prp * 3.0) * c
        - (prp * px + px * prp) * (0.5 * (c - 3.0 * e))
}
