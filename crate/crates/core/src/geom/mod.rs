//! Shared geometric primitives: SO(3)/SE(3) algebra, pinhole projection,
//! robust loss kernels, and two-view triangulation helpers.
//!
//! Conventions used throughout the crate:
//!
//! * Poses map world points to the camera frame, `x_cam = R x_world + t`;
//!   the camera center in world coordinates is `c = -R^T t`.
//! * SE(3) twists are ordered `[rotation; translation]` and applied as
//!   left-multiplicative updates, `T' = exp(twist) * T`.
//! * Pixels are `(fx * x/z + cx, fy * y/z + cy)` with `z` the camera-frame
//!   depth; points with `z <= DEPTH_EPSILON` fail cheirality.

mod align;
mod camera;
mod pose;
mod robust;
mod rotation;
mod triangulate;

pub use align::{umeyama_alignment, Similarity};
pub use camera::{project, project_camera_point, CameraIntrinsics, ProjectionError, DEPTH_EPSILON};
pub use pose::{se3_compose, se3_exp, se3_left_jacobian, se3_log, Pose, Twist};
pub use robust::{robust_loss, KernelKind, RobustKernel};
pub use rotation::{skew, so3_exp, so3_left_jacobian, so3_left_jacobian_inv, so3_log, Rotation};
pub use triangulate::{ray_angle, triangulate_midpoint};
