use super::scene::{GtObservation, GtTrack, Scene, SceneCamera, ScenePoint};
use crate::geom::{CameraIntrinsics, Pose, Rotation};
use nalgebra::{Matrix3, Vector2, Vector3};
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SceneIoError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// Writes a scene as a line-oriented text file. Floats use Rust's shortest
/// round-trip formatting, so reading the file back recovers values exactly.
///
/// ```text
/// splatsfm-scene 1
/// seed <u64>
/// camera <id> <w> <h> <fx> <fy> <cx> <cy> <r00..r22 row major> <tx ty tz>
/// point <id> <x> <y> <z> <r> <g> <b>
/// track <id> <point_id> <n_obs> { <camera> <keypoint> <px> <py> } ...
/// ```
pub fn write_scene(path: &Path, scene: &Scene) -> Result<(), SceneIoError> {
    let mut out = String::new();
    out.push_str("splatsfm-scene 1\n");
    writeln!(out, "seed {}", scene.seed).unwrap();
    for (i, cam) in scene.cameras.iter().enumerate() {
        let k = &cam.intrinsics;
        let r = cam.pose.rotation.matrix();
        let t = &cam.pose.translation;
        write!(out, "camera {} {} {} {} {} {} {}", i, k.width, k.height, k.fx, k.fy, k.cx, k.cy)
            .unwrap();
        for row in 0..3 {
            for col in 0..3 {
                write!(out, " {}", r[(row, col)]).unwrap();
            }
        }
        writeln!(out, " {} {} {}", t.x, t.y, t.z).unwrap();
    }
    for (i, p) in scene.points.iter().enumerate() {
        writeln!(
            out,
            "point {} {} {} {} {} {} {}",
            i, p.position.x, p.position.y, p.position.z, p.color[0], p.color[1], p.color[2]
        )
        .unwrap();
    }
    for (i, t) in scene.tracks.iter().enumerate() {
        write!(out, "track {} {} {}", i, t.point, t.observations.len()).unwrap();
        for o in &t.observations {
            write!(out, " {} {} {} {}", o.camera, o.keypoint, o.pixel.x, o.pixel.y).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_scene(path: &Path) -> Result<Scene, SceneIoError> {
    let text = std::fs::read_to_string(path)?;
    let mut seed = 0u64;
    let mut cameras = Vec::new();
    let mut points = Vec::new();
    let mut tracks = Vec::new();

    for (lineno, line) in text.lines().enumerate() {
        let err = |msg: String| SceneIoError::Parse { line: lineno + 1, msg };
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| s.parse::<f64>().map_err(|e| err(format!("{s:?}: {e}")));
        let int = |s: &str| s.parse::<usize>().map_err(|e| err(format!("{s:?}: {e}")));
        match f[0] {
            "splatsfm-scene" => {
                if f.get(1) != Some(&"1") {
                    return Err(err("unsupported scene version".into()));
                }
            }
            "seed" => seed = f[1].parse().map_err(|e| err(format!("seed: {e}")))?,
            "camera" => {
                if f.len() != 20 {
                    return Err(err(format!("camera record needs 20 fields, got {}", f.len())));
                }
                let intrinsics = CameraIntrinsics::new(
                    num(f[4])?,
                    num(f[5])?,
                    num(f[6])?,
                    num(f[7])?,
                    int(f[2])?,
                    int(f[3])?,
                );
                let mut r = Matrix3::zeros();
                for row in 0..3 {
                    for col in 0..3 {
                        r[(row, col)] = num(f[8 + row * 3 + col])?;
                    }
                }
                let t = Vector3::new(num(f[17])?, num(f[18])?, num(f[19])?);
                cameras.push(SceneCamera {
                    intrinsics,
                    pose: Pose::new(Rotation::from_matrix_unchecked(r), t),
                });
            }
            "point" => {
                if f.len() != 8 {
                    return Err(err(format!("point record needs 8 fields, got {}", f.len())));
                }
                points.push(ScenePoint {
                    position: Vector3::new(num(f[2])?, num(f[3])?, num(f[4])?),
                    color: [num(f[5])?, num(f[6])?, num(f[7])?],
                });
            }
            "track" => {
                let n_obs = int(f[3])?;
                if f.len() != 4 + 4 * n_obs {
                    return Err(err("track record length mismatch".into()));
                }
                let observations = (0..n_obs)
                    .map(|k| {
                        let base = 4 + 4 * k;
                        Ok(GtObservation {
                            camera: int(f[base])?,
                            keypoint: int(f[base + 1])?,
                            pixel: Vector2::new(num(f[base + 2])?, num(f[base + 3])?),
                        })
                    })
                    .collect::<Result<Vec<_>, SceneIoError>>()?;
                tracks.push(GtTrack { point: int(f[2])?, observations });
            }
            other => return Err(err(format!("unknown record {other:?}"))),
        }
    }
    Ok(Scene { cameras, points, tracks, seed })
}
