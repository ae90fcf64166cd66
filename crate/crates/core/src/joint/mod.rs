//! Joint optimization of Gaussians, camera-pose adjustments, and persistent
//! track points under combined photometric and reprojection losses.
//!
//! Track points are optimized as parameters separate from Gaussian
//! positions: the reprojection loss anchors the poses geometrically even
//! while the primitives are still poor, and the photometric loss refines
//! both appearance and poses. Ablation switches disable either pathway or
//! merge the track points into the Gaussian positions.

mod adam;
mod eval;
mod io;
pub(crate) mod loss;
mod optimize;

pub use adam::Adam;
pub use eval::{evaluate_state, EvalRecord};
pub use io::{load_checkpoint, save_checkpoint, write_loss_trace};
pub use loss::{joint_ba_loss, BaLossGrads};
pub use optimize::{joint_optimize, IterationRecord, JointError, JointRun};

use crate::ba::Reconstruction;
use crate::geom::{se3_compose, CameraIntrinsics, Pose, Twist};
use crate::splat::{GaussianSet, RenderOptions};
use crate::tracks::Track;
use nalgebra::Vector3;

/// Ablation modes for the joint loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Ablation {
    /// Both losses; track points separate from Gaussians.
    Full,
    /// Pose adjustments receive no gradients and never move.
    FrozenPoses,
    /// Reprojection loss disabled (photometric gradients only).
    PhotometricOnly,
    /// Track points alias the Gaussian positions they initialized.
    MergedTracks,
}

impl std::str::FromStr for Ablation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "full" => Ok(Ablation::Full),
            "frozen-poses" => Ok(Ablation::FrozenPoses),
            "photometric-only" => Ok(Ablation::PhotometricOnly),
            "merged-tracks" => Ok(Ablation::MergedTracks),
            other => Err(format!("unknown ablation {other:?}")),
        }
    }
}

/// Hyperparameters of the joint loop. Learning rates follow the standard
/// splat-training schedule; positions and track points scale with the scene
/// extent.
#[derive(Debug, Clone)]
pub struct JointConfig {
    pub lambda_ba: f64,
    pub huber_delta_px: f64,
    pub lambda_ssim: f64,
    pub lr_pose: f64,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_track_point: f64,
    pub iterations: usize,
    pub batch_size: usize,
    pub ablation: Ablation,
    pub seed: u64,
    pub scene_extent: f64,
    pub render: RenderOptions,
    /// Total-loss blowup factor that aborts the run.
    pub divergence_factor: f64,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            lambda_ba: 1e-4,
            huber_delta_px: 1.0,
            lambda_ssim: 0.2,
            lr_pose: 1e-5,
            lr_position: 1.6e-4,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
            lr_track_point: 1e-4,
            iterations: 3000,
            batch_size: 1,
            ablation: Ablation::Full,
            seed: 0,
            scene_extent: 1.0,
            render: RenderOptions::default(),
            divergence_factor: 10.0,
        }
    }
}

/// The three jointly optimized parameter blocks plus the static data they
/// reference.
#[derive(Debug, Clone)]
pub struct JointState {
    pub gaussians: GaussianSet,
    pub base_poses: Vec<Pose>,
    /// Per-camera twist applied as `exp(adjustment) * base`; the anchor's
    /// stays exactly zero.
    pub pose_adjustments: Vec<Twist>,
    /// Track 3D points, separate from Gaussian positions.
    pub track_points: Vec<Vector3<f64>>,
    pub tracks: Vec<Track>,
    pub intrinsics: Vec<CameraIntrinsics>,
    /// Gauge anchor camera.
    pub anchor: usize,
    /// For the merged-tracks ablation: index of the Gaussian initialized
    /// from each track point.
    pub track_gaussian: Vec<usize>,
}

impl JointState {
    /// Builds the state from an SfM reconstruction and the Gaussians
    /// initialized from its points. Cameras must be densely indexed
    /// `0..n`; track order matches the Gaussian initialization order.
    pub fn from_reconstruction(recon: &Reconstruction, gaussians: GaussianSet) -> Self {
        let n_cams = recon.poses.keys().max().map(|m| m + 1).unwrap_or(0);
        let mut base_poses = Vec::with_capacity(n_cams);
        let mut intrinsics = Vec::with_capacity(n_cams);
        for i in 0..n_cams {
            base_poses.push(recon.poses[&i]);
            intrinsics.push(recon.intrinsics[&i]);
        }
        let solved: Vec<&Track> =
            recon.tracks.iter().filter(|t| t.point.is_some()).collect();
        let track_points: Vec<Vector3<f64>> =
            solved.iter().map(|t| t.point.unwrap()).collect();
        let tracks: Vec<Track> = solved.into_iter().cloned().collect();
        let track_gaussian = (0..tracks.len()).collect();
        JointState {
            gaussians,
            pose_adjustments: vec![Twist::zeros(); n_cams],
            base_poses,
            track_points,
            tracks,
            intrinsics,
            anchor: recon.anchor,
            track_gaussian,
        }
    }

    pub fn composed_pose(&self, camera: usize) -> Pose {
        se3_compose(&self.base_poses[camera], &self.pose_adjustments[camera])
    }

    pub fn composed_poses(&self) -> Vec<Pose> {
        (0..self.base_poses.len()).map(|i| self.composed_pose(i)).collect()
    }
}
