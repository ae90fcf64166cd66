use super::pose::Pose;
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Cheirality guard: camera-frame depths at or below this fail projection.
pub const DEPTH_EPSILON: f64 = 1e-8;

/// Pinhole intrinsics in pixel units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: usize, height: usize) -> Self {
        CameraIntrinsics { fx, fy, cx, cy, width, height }
    }

    /// Square-pixel camera with the principal point at the image center.
    pub fn centered(focal: f64, width: usize, height: usize) -> Self {
        CameraIntrinsics {
            fx: focal,
            fy: focal,
            cx: width as f64 * 0.5,
            cy: height as f64 * 0.5,
            width,
            height,
        }
    }

    pub fn k_matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn k_inverse(&self) -> Matrix3<f64> {
        Matrix3::new(
            1.0 / self.fx,
            0.0,
            -self.cx / self.fx,
            0.0,
            1.0 / self.fy,
            -self.cy / self.fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Camera-frame direction through a pixel (z = 1 plane, not normalized).
    pub fn unproject(&self, pixel: &Vector2<f64>) -> Vector3<f64> {
        Vector3::new((pixel.x - self.cx) / self.fx, (pixel.y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, pixel: &Vector2<f64>) -> bool {
        pixel.x >= 0.0
            && pixel.y >= 0.0
            && pixel.x < self.width as f64
            && pixel.y < self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum ProjectionError {
    /// The point lies at or behind the camera plane (cheirality violation).
    #[error("non-positive depth {depth}")]
    NonPositiveDepth { depth: f64 },
}

/// Projects a camera-frame point to pixels.
pub fn project_camera_point(
    k: &CameraIntrinsics,
    p: &Vector3<f64>,
) -> Result<Vector2<f64>, ProjectionError> {
    if p.z <= DEPTH_EPSILON {
        return Err(ProjectionError::NonPositiveDepth { depth: p.z });
    }
    Ok(Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy))
}

/// Projects a world point through a pose to pixels.
pub fn project(
    k: &CameraIntrinsics,
    pose: &Pose,
    x_world: &Vector3<f64>,
) -> Result<Vector2<f64>, ProjectionError> {
    project_camera_point(k, &pose.transform(x_world))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cam() -> CameraIntrinsics {
        CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0, 100, 100)
    }

    #[test]
    fn optical_axis_projects_to_principal_point() {
        let px = project(&unit_cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn perspective_division() {
        let px = project(&unit_cam(), &Pose::identity(), &Vector3::new(2.0, 4.0, 2.0)).unwrap();
        assert_eq!(px, Vector2::new(1.0, 2.0));
    }

    #[test]
    fn focal_and_principal_point_offsets() {
        let k = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0, 640, 480);
        let px = project(&k, &Pose::identity(), &Vector3::new(0.5, 0.0, 1.0)).unwrap();
        assert_eq!(px, Vector2::new(370.0, 240.0));
    }

    #[test]
    fn behind_camera_fails_cheirality() {
        let err = project(&unit_cam(), &Pose::identity(), &Vector3::new(0.0, 0.0, -1.0));
        assert!(matches!(err, Err(ProjectionError::NonPositiveDepth { .. })));
    }

    #[test]
    fn unproject_reproject_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..10_000 {
            let k = CameraIntrinsics::centered(rng.random_range(50.0..500.0), 640, 480);
            let pose = Pose::new(
                Rotation::random(&mut rng),
                Vector3::new(
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ),
            );
            let pixel = Vector2::new(rng.random_range(0.0..640.0), rng.random_range(0.0..480.0));
            let depth = rng.random_range(0.5..10.0);
            // Point on the pixel's ray at the chosen depth, mapped to world.
            let p_cam = k.unproject(&pixel) * depth;
            let x_world = pose.inverse().transform(&p_cam);
            let back = project(&k, &pose, &x_world).unwrap();
            assert!((back - pixel).norm() < 1e-9);
        }
    }
}
