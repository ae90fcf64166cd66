//! COLMAP text-format export/import (cameras.txt, images.txt,
//! points3D.txt) with the PINHOLE camera model and Hamilton w-first
//! world-to-camera quaternions.

use crate::ba::Reconstruction;
use crate::geom::{CameraIntrinsics, Pose, Rotation};
use crate::tracks::{Observation, Track};
use nalgebra::{Matrix3, Vector2, Vector3};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ColmapError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{file} line {line}: {msg}")]
    Parse { file: &'static str, line: usize, msg: String },
}

/// Rotation matrix (world-to-camera) to Hamilton quaternion, w first.
fn rotation_to_quaternion(r: &Rotation) -> [f64; 4] {
    let m = r.matrix();
    let trace = m.trace();
    if trace > 0.0 {
        let s = (trace + 1.0).sqrt() * 2.0;
        [
            0.25 * s,
            (m[(2, 1)] - m[(1, 2)]) / s,
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(1, 0)] - m[(0, 1)]) / s,
        ]
    } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
        let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(2, 1)] - m[(1, 2)]) / s,
            0.25 * s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
        ]
    } else if m[(1, 1)] > m[(2, 2)] {
        let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
        [
            (m[(0, 2)] - m[(2, 0)]) / s,
            (m[(0, 1)] + m[(1, 0)]) / s,
            0.25 * s,
            (m[(1, 2)] + m[(2, 1)]) / s,
        ]
    } else {
        let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
        [
            (m[(1, 0)] - m[(0, 1)]) / s,
            (m[(0, 2)] + m[(2, 0)]) / s,
            (m[(1, 2)] + m[(2, 1)]) / s,
            0.25 * s,
        ]
    }
}

fn quaternion_to_rotation(q: &[f64; 4]) -> Rotation {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Rotation::from_matrix_unchecked(Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    ))
}

/// Writes cameras.txt, images.txt, points3D.txt. Camera and image ids are
/// `1 + internal id`; optional per-track colors default to mid-gray.
pub fn export_colmap_text(
    recon: &Reconstruction,
    colors: Option<&[[u8; 3]]>,
    dir: &Path,
) -> Result<(), ColmapError> {
    std::fs::create_dir_all(dir)?;

    // Per-image 2D observation tables (pixel, track id), in track order.
    let mut per_image: BTreeMap<usize, Vec<(Vector2<f64>, usize)>> = BTreeMap::new();
    for cam in recon.poses.keys() {
        per_image.insert(*cam, Vec::new());
    }
    let solved: Vec<(usize, &Track)> = recon
        .tracks
        .iter()
        .enumerate()
        .filter(|(_, t)| t.point.is_some())
        .collect();
    // point2d index of (track, image).
    let mut obs_index: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    for (ti, t) in &solved {
        for o in &t.observations {
            let list = per_image.entry(o.image).or_default();
            obs_index.insert((*ti, o.image), list.len());
            list.push((o.pixel, *ti));
        }
    }

    let mut cameras = String::new();
    cameras.push_str("# Camera list with one line of data per camera:\n");
    cameras.push_str("#   CAMERA_ID, MODEL, WIDTH, HEIGHT, PARAMS[]\n");
    writeln!(cameras, "# Number of cameras: {}", recon.intrinsics.len()).unwrap();
    for (cam, k) in &recon.intrinsics {
        writeln!(
            cameras,
            "{} PINHOLE {} {} {} {} {} {}",
            cam + 1,
            k.width,
            k.height,
            k.fx,
            k.fy,
            k.cx,
            k.cy
        )
        .unwrap();
    }
    std::fs::write(dir.join("cameras.txt"), cameras)?;

    let mut images = String::new();
    images.push_str("# Image list with two lines of data per image:\n");
    images.push_str("#   IMAGE_ID, QW, QX, QY, QZ, TX, TY, TZ, CAMERA_ID, NAME\n");
    images.push_str("#   POINTS2D[] as (X, Y, POINT3D_ID)\n");
    writeln!(images, "# Number of images: {}", recon.poses.len()).unwrap();
    for (cam, pose) in &recon.poses {
        let q = rotation_to_quaternion(&pose.rotation);
        let t = &pose.translation;
        writeln!(
            images,
            "{} {} {} {} {} {} {} {} {} cam_{:04}.png",
            cam + 1,
            q[0],
            q[1],
            q[2],
            q[3],
            t.x,
            t.y,
            t.z,
            cam + 1,
            cam
        )
        .unwrap();
        let obs = &per_image[cam];
        let mut line = String::new();
        for (i, (px, ti)) in obs.iter().enumerate() {
            if i > 0 {
                line.push(' ');
            }
            write!(line, "{} {} {}", px.x, px.y, ti + 1).unwrap();
        }
        images.push_str(&line);
        images.push('\n');
    }
    std::fs::write(dir.join("images.txt"), images)?;

    let mut points = String::new();
    points.push_str("# 3D point list with one line of data per point:\n");
    points.push_str("#   POINT3D_ID, X, Y, Z, R, G, B, ERROR, TRACK[] as (IMAGE_ID, POINT2D_IDX)\n");
    writeln!(points, "# Number of points: {}", solved.len()).unwrap();
    for (ti, t) in &solved {
        let x = t.point.unwrap();
        let rgb = colors.map(|c| c[*ti]).unwrap_or([128, 128, 128]);
        // Mean reprojection error of the track.
        let mut err_sum = 0.0;
        for o in &t.observations {
            err_sum += crate::ba::reprojection_residual(
                &recon.intrinsics[&o.image],
                &recon.poses[&o.image],
                &x,
                &o.pixel,
            )
            .map(|r| r.norm())
            .unwrap_or(1e3);
        }
        let err = err_sum / t.observations.len().max(1) as f64;
        write!(points, "{} {} {} {} {} {} {} {}", ti + 1, x.x, x.y, x.z, rgb[0], rgb[1], rgb[2], err)
            .unwrap();
        for o in &t.observations {
            write!(points, " {} {}", o.image + 1, obs_index[&(*ti, o.image)]).unwrap();
        }
        points.push('\n');
    }
    std::fs::write(dir.join("points3D.txt"), points)?;
    Ok(())
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Minimal reader for the text triple; reconstructs poses, intrinsics, and
/// tracks (observation keypoint ids are the POINT2D indices).
pub fn import_colmap_text(dir: &Path) -> Result<Reconstruction, ColmapError> {
    let parse_err = |file: &'static str, line: usize, msg: String| ColmapError::Parse {
        file,
        line,
        msg,
    };

    let cameras_txt = std::fs::read_to_string(dir.join("cameras.txt"))?;
    let mut intrinsics: BTreeMap<usize, CameraIntrinsics> = BTreeMap::new();
    for (lineno, line) in data_lines(&cameras_txt) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 8 || f[1] != "PINHOLE" {
            return Err(parse_err("cameras.txt", lineno, "expected PINHOLE record".into()));
        }
        let id: usize = f[0]
            .parse()
            .map_err(|e| parse_err("cameras.txt", lineno, format!("{e}")))?;
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| parse_err("cameras.txt", lineno, format!("{e}")))
        };
        intrinsics.insert(
            id - 1,
            CameraIntrinsics::new(
                num(f[4])?,
                num(f[5])?,
                num(f[6])?,
                num(f[7])?,
                f[2].parse().map_err(|e| parse_err("cameras.txt", lineno, format!("{e}")))?,
                f[3].parse().map_err(|e| parse_err("cameras.txt", lineno, format!("{e}")))?,
            ),
        );
    }

    let images_txt = std::fs::read_to_string(dir.join("images.txt"))?;
    let mut poses: BTreeMap<usize, Pose> = BTreeMap::new();
    // (image, point2d idx) -> pixel
    let mut pixels: BTreeMap<(usize, usize), Vector2<f64>> = BTreeMap::new();
    let mut lines = data_lines(&images_txt);
    while let Some((lineno, header)) = lines.next() {
        let f: Vec<&str> = header.split_whitespace().collect();
        if f.len() < 10 {
            return Err(parse_err("images.txt", lineno, "short image header".into()));
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| parse_err("images.txt", lineno, format!("{e}")))
        };
        let id: usize = f[0]
            .parse()
            .map_err(|e| parse_err("images.txt", lineno, format!("{e}")))?;
        let q = [num(f[1])?, num(f[2])?, num(f[3])?, num(f[4])?];
        let t = Vector3::new(num(f[5])?, num(f[6])?, num(f[7])?);
        poses.insert(id - 1, Pose::new(quaternion_to_rotation(&q), t));

        let (obs_lineno, obs_line) =
            lines.next().ok_or_else(|| parse_err("images.txt", lineno, "missing points2D line".into()))?;
        let fields: Vec<&str> = obs_line.split_whitespace().collect();
        if fields.len() % 3 != 0 {
            return Err(parse_err("images.txt", obs_lineno, "points2D not triples".into()));
        }
        for (k, triple) in fields.chunks(3).enumerate() {
            let x = triple[0]
                .parse::<f64>()
                .map_err(|e| parse_err("images.txt", obs_lineno, format!("{e}")))?;
            let y = triple[1]
                .parse::<f64>()
                .map_err(|e| parse_err("images.txt", obs_lineno, format!("{e}")))?;
            pixels.insert((id - 1, k), Vector2::new(x, y));
        }
    }

    let points_txt = std::fs::read_to_string(dir.join("points3D.txt"))?;
    let mut tracks = Vec::new();
    for (lineno, line) in data_lines(&points_txt) {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() < 8 || (f.len() - 8) % 2 != 0 {
            return Err(parse_err("points3D.txt", lineno, "bad point record".into()));
        }
        let num = |s: &str| {
            s.parse::<f64>().map_err(|e| parse_err("points3D.txt", lineno, format!("{e}")))
        };
        let point = Vector3::new(num(f[1])?, num(f[2])?, num(f[3])?);
        let mut observations = Vec::new();
        for pair in f[8..].chunks(2) {
            let image: usize = pair[0]
                .parse()
                .map_err(|e| parse_err("points3D.txt", lineno, format!("{e}")))?;
            let p2d: usize = pair[1]
                .parse()
                .map_err(|e| parse_err("points3D.txt", lineno, format!("{e}")))?;
            let pixel = *pixels.get(&(image - 1, p2d)).ok_or_else(|| {
                parse_err("points3D.txt", lineno, format!("dangling obs ({image}, {p2d})"))
            })?;
            observations.push(Observation { image: image - 1, keypoint: p2d, pixel });
        }
        tracks.push(Track { id: tracks.len(), point: Some(point), observations });
    }

    Ok(Reconstruction { intrinsics, poses, tracks, anchor: 0 })
}
