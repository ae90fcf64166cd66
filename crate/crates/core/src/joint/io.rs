use super::optimize::IterationRecord;
use super::JointState;
use crate::geom::{CameraIntrinsics, Pose, Rotation, Twist};
use crate::splat::GaussianSet;
use crate::tracks::{Observation, Track};
use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use std::fmt::Write as _;
use std::path::Path;

/// Serialized mirror of [`JointState`]. JSON floats use shortest
/// round-trip formatting, so save/load recovers values exactly.
#[derive(Serialize, Deserialize)]
struct StateFile {
    version: u32,
    anchor: usize,
    intrinsics: Vec<CameraIntrinsics>,
    base_poses: Vec<PoseRecord>,
    pose_adjustments: Vec<[f64; 6]>,
    gaussians: GaussiansRecord,
    track_points: Vec<[f64; 3]>,
    tracks: Vec<TrackRecord>,
    track_gaussian: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct PoseRecord {
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
}

#[derive(Serialize, Deserialize)]
struct GaussiansRecord {
    sh_degree: usize,
    positions: Vec<[f64; 3]>,
    log_scales: Vec<[f64; 3]>,
    rotations: Vec<[f64; 4]>,
    opacity_logits: Vec<f64>,
    sh: Vec<[f64; 3]>,
}

#[derive(Serialize, Deserialize)]
struct TrackRecord {
    id: usize,
    observations: Vec<(usize, usize, f64, f64)>,
}

fn pose_record(p: &Pose) -> PoseRecord {
    let m = p.rotation.matrix();
    PoseRecord {
        rotation: [
            [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
            [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
            [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
        ],
        translation: [p.translation.x, p.translation.y, p.translation.z],
    }
}

fn pose_from(r: &PoseRecord) -> Pose {
    let m = Matrix3::new(
        r.rotation[0][0],
        r.rotation[0][1],
        r.rotation[0][2],
        r.rotation[1][0],
        r.rotation[1][1],
        r.rotation[1][2],
        r.rotation[2][0],
        r.rotation[2][1],
        r.rotation[2][2],
    );
    Pose::new(
        Rotation::from_matrix_unchecked(m),
        Vector3::new(r.translation[0], r.translation[1], r.translation[2]),
    )
}

pub fn save_checkpoint(path: &Path, state: &JointState) -> std::io::Result<()> {
    let file = StateFile {
        version: 1,
        anchor: state.anchor,
        intrinsics: state.intrinsics.clone(),
        base_poses: state.base_poses.iter().map(pose_record).collect(),
        pose_adjustments: state
            .pose_adjustments
            .iter()
            .map(|t| [t[0], t[1], t[2], t[3], t[4], t[5]])
            .collect(),
        gaussians: GaussiansRecord {
            sh_degree: state.gaussians.sh_degree,
            positions: state.gaussians.positions.iter().map(|p| [p.x, p.y, p.z]).collect(),
            log_scales: state.gaussians.log_scales.iter().map(|p| [p.x, p.y, p.z]).collect(),
            rotations: state.gaussians.rotations.clone(),
            opacity_logits: state.gaussians.opacity_logits.clone(),
            sh: state.gaussians.sh.clone(),
        },
        track_points: state.track_points.iter().map(|p| [p.x, p.y, p.z]).collect(),
        tracks: state
            .tracks
            .iter()
            .map(|t| TrackRecord {
                id: t.id,
                observations: t
                    .observations
                    .iter()
                    .map(|o| (o.image, o.keypoint, o.pixel.x, o.pixel.y))
                    .collect(),
            })
            .collect(),
        track_gaussian: state.track_gaussian.clone(),
    };
    std::fs::write(path, serde_json::to_string(&file).expect("serializable"))
}

pub fn load_checkpoint(path: &Path) -> std::io::Result<JointState> {
    let text = std::fs::read_to_string(path)?;
    let file: StateFile = serde_json::from_str(&text)
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
    Ok(JointState {
        gaussians: GaussianSet {
            positions: file.gaussians.positions.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            log_scales: file.gaussians.log_scales.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
            rotations: file.gaussians.rotations,
            opacity_logits: file.gaussians.opacity_logits,
            sh: file.gaussians.sh,
            sh_degree: file.gaussians.sh_degree,
        },
        base_poses: file.base_poses.iter().map(pose_from).collect(),
        pose_adjustments: file
            .pose_adjustments
            .iter()
            .map(|t| Twist::from_row_slice(t))
            .collect(),
        track_points: file.track_points.iter().map(|p| Vector3::new(p[0], p[1], p[2])).collect(),
        tracks: file
            .tracks
            .iter()
            .map(|t| Track {
                id: t.id,
                point: None,
                observations: t
                    .observations
                    .iter()
                    .map(|&(image, keypoint, x, y)| Observation {
                        image,
                        keypoint,
                        pixel: Vector2::new(x, y),
                    })
                    .collect(),
            })
            .collect(),
        intrinsics: file.intrinsics,
        anchor: file.anchor,
        track_gaussian: file.track_gaussian,
    })
}

/// Loss trace as CSV: `iteration,l_photo,l_ba,total`.
pub fn write_loss_trace(path: &Path, trace: &[IterationRecord]) -> std::io::Result<()> {
    let mut out = String::from("iteration,l_photo,l_ba,total\n");
    for r in trace {
        writeln!(out, "{},{},{},{}", r.iteration, r.l_photo, r.l_ba, r.total)
            .expect("write to string");
    }
    std::fs::write(path, out)
}
