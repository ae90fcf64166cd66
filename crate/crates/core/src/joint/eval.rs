use super::JointState;
use crate::geom::Pose;
use crate::img::{psnr, ssim, ImageBuffer};
use crate::pipeline::metrics::{ate, rotation_error};
use crate::splat::render;

/// Rendering quality and (when ground truth is available) pose accuracy.
#[derive(Debug, Clone, serde::Serialize)]
pub struct EvalRecord {
    pub cameras: Vec<usize>,
    pub psnr_per_image: Vec<f64>,
    pub ssim_per_image: Vec<f64>,
    pub mean_psnr: f64,
    pub mean_ssim: f64,
    pub rotation_error_mean_deg: Option<f64>,
    pub rotation_error_median_deg: Option<f64>,
    pub ate_extent: Option<f64>,
}

/// Renders the given cameras with the state's composed poses and scores
/// them against the reference images; pose metrics are computed over all
/// cameras when ground-truth poses are supplied.
pub fn evaluate_state(
    state: &JointState,
    images: &[ImageBuffer],
    eval_cameras: &[usize],
    gt_poses: Option<&[Pose]>,
) -> EvalRecord {
    let mut psnr_per_image = Vec::with_capacity(eval_cameras.len());
    let mut ssim_per_image = Vec::with_capacity(eval_cameras.len());
    for &cam in eval_cameras {
        let rendered = render(
            &state.gaussians,
            &state.intrinsics[cam],
            &state.composed_pose(cam),
            &crate::splat::RenderOptions::default(),
        );
        psnr_per_image.push(psnr(&rendered.image, &images[cam]));
        ssim_per_image.push(ssim(&rendered.image, &images[cam]));
    }
    let n = eval_cameras.len().max(1) as f64;
    let mean_psnr = psnr_per_image.iter().sum::<f64>() / n;
    let mean_ssim = ssim_per_image.iter().sum::<f64>() / n;

    let (mut rot_mean, mut rot_median, mut ate_val) = (None, None, None);
    if let Some(gt) = gt_poses {
        let est = state.composed_poses();
        if let Ok(summary) = rotation_error(&est, gt) {
            rot_mean = Some(summary.mean_deg);
            rot_median = Some(summary.median_deg);
        }
        if let Ok(a) = ate(&est, gt) {
            ate_val = Some(a);
        }
    }

    EvalRecord {
        cameras: eval_cameras.to_vec(),
        psnr_per_image,
        ssim_per_image,
        mean_psnr,
        mean_ssim,
        rotation_error_mean_deg: rot_mean,
        rotation_error_median_deg: rot_median,
        ate_extent: ate_val,
    }
}
