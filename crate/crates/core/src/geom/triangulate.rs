use nalgebra::{Matrix2, Vector2 as Vec2, Vector3};

/// Midpoint triangulation of two rays `c_i + s_i d_i`.
///
/// Returns the point halfway between the closest points of the rays, or
/// `None` when the rays are close to parallel.
pub fn triangulate_midpoint(
    c1: &Vector3<f64>,
    d1: &Vector3<f64>,
    c2: &Vector3<f64>,
    d2: &Vector3<f64>,
) -> Option<Vector3<f64>> {
    // Solve [d1 -d2] [s1 s2]^T = c2 - c1 in the least-squares sense.
    let a11 = d1.dot(d1);
    let a12 = -d1.dot(d2);
    let a22 = d2.dot(d2);
    let det = a11 * a22 - a12 * a12;
    if det.abs() < 1e-14 * a11 * a22 {
        return None;
    }
    let rhs = c2 - c1;
    let b1 = d1.dot(&rhs);
    let b2 = -d2.dot(&rhs);
    let s = Matrix2::new(a11, a12, a12, a22)
        .try_inverse()
        .map(|inv| inv * Vec2::new(b1, b2))?;
    Some(((c1 + d1 * s.x) + (c2 + d2 * s.y)) * 0.5)
}

/// Angle between two ray directions, in radians.
pub fn ray_angle(d1: &Vector3<f64>, d2: &Vector3<f64>) -> f64 {
    let c = (d1.dot(d2) / (d1.norm() * d2.norm())).clamp(-1.0, 1.0);
    c.acos()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn intersecting_rays_recover_point() {
        let x = Vector3::new(0.3, -0.2, 4.0);
        let c1 = Vector3::zeros();
        let c2 = Vector3::new(1.0, 0.0, 0.0);
        let p = triangulate_midpoint(&c1, &(x - c1), &c2, &(x - c2)).unwrap();
        assert!((p - x).norm() < 1e-12);
    }

    #[test]
    fn parallel_rays_return_none() {
        let d = Vector3::new(0.0, 0.0, 1.0);
        assert!(triangulate_midpoint(&Vector3::zeros(), &d, &Vector3::new(1.0, 0.0, 0.0), &d)
            .is_none());
    }

    #[test]
    fn ray_angle_basics() {
        let a = Vector3::x();
        let b = Vector3::y();
        assert!((ray_angle(&a, &b) - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
        assert_eq!(ray_angle(&a, &a), 0.0);
    }
}
