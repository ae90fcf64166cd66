use super::JointState;
use crate::ba::{reprojection_jacobians, reprojection_residual};
use crate::geom::{robust_loss, se3_left_jacobian, RobustKernel, Twist};
use nalgebra::Vector3;

/// Cost assigned to a cheirality-failing observation (no gradient).
const CHEIRALITY_CAP_SQ_PX: f64 = 1e6;

/// Gradients of the reprojection loss.
#[derive(Debug, Clone)]
pub struct BaLossGrads {
    /// With respect to each track point (zero for tracks outside the batch).
    pub track_points: Vec<Vector3<f64>>,
    /// With respect to each camera's pose-adjustment twist (chained through
    /// the SE(3) exponential, so finite differences on the adjustment
    /// parameters match directly).
    pub pose_adjustments: Vec<Twist>,
}

/// Huber reprojection loss over the tracks observed by the batch cameras
/// (all observations of those tracks contribute, including observations in
/// cameras outside the batch). Gradients flow to both the track points and
/// the pose adjustments.
pub fn joint_ba_loss(
    state: &JointState,
    batch: &[usize],
    huber_delta_px: f64,
) -> (f64, BaLossGrads) {
    joint_ba_loss_with_points(state, &state.track_points, batch, huber_delta_px)
}

/// Same loss evaluated at explicit point positions (used by the
/// merged-tracks ablation, where points alias Gaussian positions).
pub(super) fn joint_ba_loss_with_points(
    state: &JointState,
    points: &[Vector3<f64>],
    batch: &[usize],
    huber_delta_px: f64,
) -> (f64, BaLossGrads) {
    let kernel = RobustKernel::huber(huber_delta_px);
    let poses = state.composed_poses();
    // Left Jacobians chain local twists to the adjustment parameters.
    let jl_t: Vec<nalgebra::Matrix6<f64>> = state
        .pose_adjustments
        .iter()
        .map(|adj| se3_left_jacobian(adj).transpose())
        .collect();

    let mut loss = 0.0;
    let mut grads = BaLossGrads {
        track_points: vec![Vector3::zeros(); points.len()],
        pose_adjustments: vec![Twist::zeros(); state.base_poses.len()],
    };

    for (k, track) in state.tracks.iter().enumerate() {
        if !track.observations.iter().any(|o| batch.contains(&o.image)) {
            continue;
        }
        let x = points[k];
        for o in &track.observations {
            let kk = &state.intrinsics[o.image];
            let pose = &poses[o.image];
            match reprojection_residual(kk, pose, &x, &o.pixel) {
                Ok(r) => {
                    let (rho, w) = robust_loss(&kernel, r.norm_squared());
                    loss += rho;
                    // d rho / d r = 2 rho'(s) r; for Huber the normalized
                    // weight equals rho'(s) exactly.
                    let dr = r * (2.0 * w);
                    if let Some((j_pose, j_point, _)) = reprojection_jacobians(kk, pose, &x) {
                        grads.track_points[k] += j_point.transpose() * dr;
                        let local: Twist = j_pose.transpose() * dr;
                        grads.pose_adjustments[o.image] += jl_t[o.image] * local;
                    }
                }
                Err(_) => {
                    loss += robust_loss(&kernel, CHEIRALITY_CAP_SQ_PX).0;
                }
            }
        }
    }
    (loss, grads)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::ba::Reconstruction;
    use crate::splat::init_gaussians_from_points;
    use crate::synth::{generate_scene, Layout};
    use crate::tracks::{Observation, Track};
    use nalgebra::Vector3;

    pub(crate) fn gt_state(n_cams: usize, n_pts: usize, seed: u64) -> (crate::synth::Scene, JointState) {
        let scene = generate_scene(n_cams, n_pts, Layout::Orbit, seed).unwrap();
        let recon = Reconstruction {
            intrinsics: scene.cameras.iter().enumerate().map(|(i, c)| (i, c.intrinsics)).collect(),
            poses: scene.poses().into_iter().enumerate().collect(),
            tracks: scene
                .tracks
                .iter()
                .enumerate()
                .map(|(i, t)| Track {
                    id: i,
                    point: Some(scene.points[t.point].position),
                    observations: t
                        .observations
                        .iter()
                        .map(|o| Observation { image: o.camera, keypoint: o.keypoint, pixel: o.pixel })
                        .collect(),
                })
                .collect(),
            anchor: 0,
        };
        let pts: Vec<(Vector3<f64>, [f64; 3])> = scene
            .tracks
            .iter()
            .map(|t| (scene.points[t.point].position, scene.points[t.point].color))
            .collect();
        let gaussians = init_gaussians_from_points(&pts, 0).unwrap();
        let state = JointState::from_reconstruction(&recon, gaussians);
        (scene, state)
    }

    #[test]
    fn zero_at_ground_truth() {
        let (_, state) = gt_state(6, 60, 201);
        let batch: Vec<usize> = (0..6).collect();
        let (loss, grads) = joint_ba_loss(&state, &batch, 1.0);
        assert!(loss < 1e-18);
        assert!(grads.track_points.iter().all(|g| g.norm() < 1e-9));
        assert!(grads.pose_adjustments.iter().all(|g| g.norm() < 1e-9));
    }

    #[test]
    fn unobserved_track_gets_exactly_zero_gradient() {
        let (_, state) = gt_state(6, 60, 202);
        // Batch covering only camera 0: tracks not seen by camera 0 must
        // have bitwise-zero gradients.
        let (_, grads) = joint_ba_loss(&state, &[0], 1.0);
        for (k, t) in state.tracks.iter().enumerate() {
            if !t.observations.iter().any(|o| o.image == 0) {
                assert_eq!(grads.track_points[k], Vector3::zeros());
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let (_, mut state) = gt_state(5, 40, 203);
        // Move away from the optimum so gradients are informative.
        state.pose_adjustments[2] =
            Twist::from_row_slice(&[0.01, -0.005, 0.004, 0.01, 0.02, -0.015]);
        for p in &mut state.track_points {
            p.x += 0.003;
        }
        let batch: Vec<usize> = (0..5).collect();
        let (_, grads) = joint_ba_loss(&state, &batch, 1.0);

        let h = 1e-7;
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        // Pose adjustment of camera 2.
        for c in 0..6 {
            let mut sp = state.clone();
            sp.pose_adjustments[2][c] += h;
            let mut sm = state.clone();
            sm.pose_adjustments[2][c] -= h;
            let fd = (joint_ba_loss(&sp, &batch, 1.0).0 - joint_ba_loss(&sm, &batch, 1.0).0)
                / (2.0 * h);
            assert!(
                rel(fd, grads.pose_adjustments[2][c]) < 1e-5,
                "twist[{c}]: fd {fd} vs {}",
                grads.pose_adjustments[2][c]
            );
        }
        // A few track points.
        for k in [0usize, 7, 23] {
            for c in 0..3 {
                let mut sp = state.clone();
                sp.track_points[k][c] += h;
                let mut sm = state.clone();
                sm.track_points[k][c] -= h;
                let fd = (joint_ba_loss(&sp, &batch, 1.0).0 - joint_ba_loss(&sm, &batch, 1.0).0)
                    / (2.0 * h);
                assert!(
                    rel(fd, grads.track_points[k][c]) < 1e-5,
                    "point {k}[{c}]: fd {fd} vs {}",
                    grads.track_points[k][c]
                );
            }
        }
    }
}
