//! Sparse robust bundle adjustment: poses on SE(3), points, and optionally
//! a shared focal length, minimizing Huber-robustified reprojection error
//! with Levenberg-Marquardt.
//!
//! Point blocks are Schur-eliminated (see [`crate::schur`]); a dense
//! full-system route exists as an independent cross-check. The gauge is
//! fixed by freezing the anchor pose entirely and one translation twist
//! coordinate of the most distant camera (the scale direction left over
//! from global positioning).

use crate::geom::{
    project_camera_point, robust_loss, se3_compose, CameraIntrinsics, Pose, RobustKernel, Twist,
    DEPTH_EPSILON,
};
use crate::parallel;
use crate::schur::{NormalSystem, Step};
use crate::tracks::Track;
use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix2x6, Vector2, Vector3};
use std::collections::BTreeMap;
use thiserror::Error;

/// SfM state: calibrated cameras, posed views, and triangulated tracks.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub intrinsics: BTreeMap<usize, CameraIntrinsics>,
    pub poses: BTreeMap<usize, Pose>,
    pub tracks: Vec<Track>,
    /// Gauge anchor: this pose is frozen during refinement.
    pub anchor: usize,
}

impl Reconstruction {
    pub fn observation_count(&self) -> usize {
        self.tracks.iter().map(|t| t.observations.len()).sum()
    }

    /// RMS reprojection error over observations of triangulated tracks;
    /// cheirality failures count as `cap_px`.
    pub fn rms_reprojection_error(&self, cap_px: f64) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for t in &self.tracks {
            let Some(x) = t.point else { continue };
            for o in &t.observations {
                let e = reprojection_residual(
                    &self.intrinsics[&o.image],
                    &self.poses[&o.image],
                    &x,
                    &o.pixel,
                )
                .map(|r| r.norm())
                .unwrap_or(cap_px);
                sum += e * e;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            (sum / n as f64).sqrt()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMethod {
    /// Schur-eliminated reduced camera system (default).
    Schur,
    /// Dense full normal equations; reference route for equivalence checks.
    Dense,
}

#[derive(Debug, Clone)]
pub struct BAOptions {
    pub huber_delta_px: f64,
    /// One filtering round per threshold, strictly decreasing (pixels).
    pub filter_thresholds_px: Vec<f64>,
    /// Optimize a single focal length shared by all cameras.
    pub optimize_intrinsics: bool,
    pub max_lm_iters: usize,
    /// Relative decrease of the robust objective that counts as converged.
    pub tol: f64,
    pub lambda_init: f64,
    pub solver: SolveMethod,
}

impl Default for BAOptions {
    fn default() -> Self {
        BAOptions {
            huber_delta_px: 2.0,
            filter_thresholds_px: vec![8.0, 4.0, 2.0],
            optimize_intrinsics: false,
            max_lm_iters: 50,
            tol: 1e-12,
            lambda_init: 1e-4,
            solver: SolveMethod::Schur,
        }
    }
}

#[derive(Debug, Error)]
pub enum BaError {
    #[error("reduced system not positive definite after max damping")]
    NumericalFailure,
    #[error("filtering removed {removed} of {total} observations")]
    TooFewObservations { removed: usize, total: usize },
}

/// Per-LM-run statistics.
#[derive(Debug, Clone)]
pub struct BAStats {
    /// Robust objective per accepted iterate.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub final_rms_px: f64,
}

/// Per filtering round statistics, emitted to the metrics stream.
#[derive(Debug, Clone, serde::Serialize)]
pub struct BARoundStats {
    pub round: usize,
    pub threshold_px: f64,
    pub observations_before: usize,
    pub filtered: usize,
    pub rms_px: f64,
}

/// Observed-minus-projected reprojection residual in pixels.
pub fn reprojection_residual(
    k: &CameraIntrinsics,
    pose: &Pose,
    x: &Vector3<f64>,
    observed: &Vector2<f64>,
) -> Result<Vector2<f64>, crate::geom::ProjectionError> {
    let p = pose.transform(x);
    let px = project_camera_point(k, &p)?;
    Ok(px - observed)
}

/// Analytic Jacobians of the reprojection residual: with respect to the
/// left-multiplicative pose twist `[rotation; translation]`, the point, and
/// a shared focal scale.
pub fn reprojection_jacobians(
    k: &CameraIntrinsics,
    pose: &Pose,
    x: &Vector3<f64>,
) -> Option<(Matrix2x6<f64>, Matrix2x3<f64>, Vector2<f64>)> {
    let p = pose.transform(x);
    if p.z <= DEPTH_EPSILON {
        return None;
    }
    let iz = 1.0 / p.z;
    let proj = Matrix2x3::new(
        k.fx * iz,
        0.0,
        -k.fx * p.x * iz * iz,
        0.0,
        k.fy * iz,
        -k.fy * p.y * iz * iz,
    );
    // dp/d[omega; v] = [-[p]x | I].
    let mut j_pose = Matrix2x6::zeros();
    let px = crate::geom::skew(&p);
    let minus_px = -px;
    let dp_omega = proj * minus_px;
    for r in 0..2 {
        for c in 0..3 {
            j_pose[(r, c)] = dp_omega[(r, c)];
            j_pose[(r, 3 + c)] = proj[(r, c)];
        }
    }
    let j_point = proj * pose.rotation.matrix();
    let j_focal = Vector2::new(p.x * iz, p.y * iz);
    Some((j_pose, j_point, j_focal))
}

struct Layout {
    cameras: Vec<usize>,
    cam_slot: BTreeMap<usize, usize>,
    block_dofs: Vec<usize>,
    /// Twist coordinates free per camera (empty for the anchor).
    free_twist: Vec<Vec<usize>>,
    focal_block: Option<usize>,
}

fn build_layout(recon: &Reconstruction, opts: &BAOptions) -> Layout {
    let cameras: Vec<usize> = recon.poses.keys().copied().collect();
    let cam_slot: BTreeMap<usize, usize> =
        cameras.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    // Scale camera: largest translation norm, deterministic tie-break.
    let scale_camera = cameras
        .iter()
        .filter(|&&c| c != recon.anchor)
        .max_by(|&&a, &&b| {
            recon.poses[&a]
                .translation
                .norm()
                .partial_cmp(&recon.poses[&b].translation.norm())
                .unwrap()
                .then(b.cmp(&a))
        })
        .copied()
        .unwrap_or(recon.anchor);
    let pinned = {
        let t = recon.poses[&scale_camera].translation;
        let mut k = 0;
        for i in 1..3 {
            if t[i].abs() > t[k].abs() {
                k = i;
            }
        }
        3 + k // translation component of the twist
    };
    let free_twist: Vec<Vec<usize>> = cameras
        .iter()
        .map(|&c| {
            if c == recon.anchor {
                vec![]
            } else if c == scale_camera {
                (0..6).filter(|&i| i != pinned).collect()
            } else {
                (0..6).collect()
            }
        })
        .collect();
    let mut block_dofs: Vec<usize> = free_twist.iter().map(|f| f.len()).collect();
    let focal_block = if opts.optimize_intrinsics {
        block_dofs.push(1);
        Some(cameras.len())
    } else {
        None
    };
    Layout { cameras, cam_slot, block_dofs, free_twist, focal_block }
}

/// One Levenberg-Marquardt refinement of the reconstruction. The anchor
/// pose is returned bit-identical; all other poses, points, and (optionally)
/// the shared focal are optimized.
pub fn bundle_adjust(
    recon: &Reconstruction,
    opts: &BAOptions,
) -> Result<(Reconstruction, BAStats), BaError> {
    let mut recon = recon.clone();
    let layout = build_layout(&recon, opts);
    let kernel = RobustKernel::huber(opts.huber_delta_px);

    // Solved tracks only; remember their indices.
    let solved: Vec<usize> = (0..recon.tracks.len())
        .filter(|&i| recon.tracks[i].point.is_some() && recon.tracks[i].observations.len() >= 2)
        .collect();

    let objective = |recon: &Reconstruction| -> f64 {
        solved
            .iter()
            .map(|&ti| {
                let t = &recon.tracks[ti];
                let x = t.point.unwrap();
                t.observations
                    .iter()
                    .map(|o| {
                        match reprojection_residual(
                            &recon.intrinsics[&o.image],
                            &recon.poses[&o.image],
                            &x,
                            &o.pixel,
                        ) {
                            Ok(r) => robust_loss(&kernel, r.norm_squared()).0,
                            // Cheirality failure: capped constant cost.
                            Err(_) => robust_loss(&kernel, 1e6).0,
                        }
                    })
                    .sum::<f64>()
            })
            .sum()
    };

    let mut lambda = opts.lambda_init;
    let mut obj = objective(&recon);
    let mut trace = vec![obj];
    let mut iterations = 0;

    for _ in 0..opts.max_lm_iters {
        iterations += 1;
        let sys = assemble(&recon, &layout, &solved, &kernel, opts);

        let mut accepted = false;
        let mut solve_failed_all = true;
        for _ in 0..10 {
            let step = match opts.solver {
                SolveMethod::Schur => sys.solve_schur(lambda),
                SolveMethod::Dense => sys.solve_dense(lambda),
            };
            let Some(step) = step else {
                lambda *= 10.0;
                continue;
            };
            solve_failed_all = false;
            let trial = apply_step(&recon, &layout, &solved, &step);
            let new_obj = objective(&trial);
            if new_obj <= obj {
                let rel = (obj - new_obj) / obj.max(1e-300);
                recon = trial;
                obj = new_obj;
                trace.push(obj);
                lambda = (lambda * 0.5).max(1e-15);
                accepted = true;
                if rel < opts.tol {
                    let rms = recon.rms_reprojection_error(1e3);
                    return Ok((recon, BAStats { objective_trace: trace, iterations, final_rms_px: rms }));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            if solve_failed_all {
                return Err(BaError::NumericalFailure);
            }
            break; // stalled at a (local) optimum
        }
    }

    let rms = recon.rms_reprojection_error(1e3);
    Ok((recon, BAStats { objective_trace: trace, iterations, final_rms_px: rms }))
}

fn assemble(
    recon: &Reconstruction,
    layout: &Layout,
    solved: &[usize],
    kernel: &RobustKernel,
    opts: &BAOptions,
) -> NormalSystem {
    parallel::chunked_fold(
        solved,
        64,
        || NormalSystem::new(layout.block_dofs.clone(), solved.len()),
        |sys, pi, &ti| {
            let t = &recon.tracks[ti];
            let x = t.point.unwrap();
            for o in &t.observations {
                let k = &recon.intrinsics[&o.image];
                let pose = &recon.poses[&o.image];
                let Ok(r) = reprojection_residual(k, pose, &x, &o.pixel) else {
                    continue; // cheirality failure: no gradient
                };
                let Some((j_pose, j_point, j_focal)) = reprojection_jacobians(k, pose, &x) else {
                    continue;
                };
                let (_, w) = robust_loss(kernel, r.norm_squared());

                let slot = layout.cam_slot[&o.image];
                let free = &layout.free_twist[slot];
                let mut blocks: Vec<(usize, DMatrix<f64>)> = Vec::with_capacity(2);
                if !free.is_empty() {
                    let mut jc = DMatrix::zeros(2, free.len());
                    for (ci, &coord) in free.iter().enumerate() {
                        jc[(0, ci)] = j_pose[(0, coord)];
                        jc[(1, ci)] = j_pose[(1, coord)];
                    }
                    blocks.push((slot, jc));
                }
                if let Some(fb) = layout.focal_block {
                    let _ = opts;
                    let jf = DMatrix::from_column_slice(2, 1, &[j_focal.x, j_focal.y]);
                    blocks.push((fb, jf));
                }
                let jp = DMatrix::from_fn(2, 3, |r0, c0| j_point[(r0, c0)]);
                let rv = DVector::from_row_slice(&[r.x, r.y]);
                sys.add_observation(&blocks, Some((pi, jp)), &rv, w);
            }
        },
        |sys, part| sys.merge(part),
    )
}

fn apply_step(
    recon: &Reconstruction,
    layout: &Layout,
    solved: &[usize],
    step: &Step,
) -> Reconstruction {
    let mut out = recon.clone();
    for (slot, &cam) in layout.cameras.iter().enumerate() {
        let free = &layout.free_twist[slot];
        if free.is_empty() {
            continue; // anchor: bit-identical
        }
        let off = step_offset(layout, slot);
        let mut twist = Twist::zeros();
        for (ci, &coord) in free.iter().enumerate() {
            twist[coord] = step.reduced[off + ci];
        }
        out.poses.insert(cam, se3_compose(&recon.poses[&cam], &twist));
    }
    if let Some(fb) = layout.focal_block {
        let df = step.reduced[step_offset(layout, fb)];
        for k in out.intrinsics.values_mut() {
            k.fx += df;
            k.fy += df;
        }
    }
    for (pi, &ti) in solved.iter().enumerate() {
        let x = out.tracks[ti].point.unwrap();
        out.tracks[ti].point = Some(x + step.points[pi]);
    }
    out
}

fn step_offset(layout: &Layout, slot: usize) -> usize {
    layout.block_dofs[..slot].iter().sum()
}

/// Bundle adjustment iterated with progressively tightening reprojection
/// thresholds: after each run, observations with error above the round's
/// threshold (or failing cheirality) are removed and starved tracks are
/// dropped.
pub fn iterate_ba_with_filtering(
    recon: &Reconstruction,
    opts: &BAOptions,
) -> Result<(Reconstruction, Vec<BARoundStats>), BaError> {
    assert!(
        opts.filter_thresholds_px.windows(2).all(|w| w[1] < w[0]),
        "filter thresholds must be strictly decreasing"
    );
    let total_initial = recon.observation_count();
    let mut current = recon.clone();
    let mut stats = Vec::new();
    let mut removed_total = 0usize;

    for (round, &threshold) in opts.filter_thresholds_px.iter().enumerate() {
        let (adjusted, _) = bundle_adjust(&current, opts)?;
        current = adjusted;

        let before = current.observation_count();
        let mut filtered = 0usize;
        for t in &mut current.tracks {
            let Some(x) = t.point else { continue };
            t.observations.retain(|o| {
                let keep = reprojection_residual(
                    &current.intrinsics[&o.image],
                    &current.poses[&o.image],
                    &x,
                    &o.pixel,
                )
                .map(|r| r.norm() <= threshold)
                .unwrap_or(false);
                if !keep {
                    filtered += 1;
                }
                keep
            });
        }
        // Tracks starved below two observations lose their point.
        current.tracks.retain(|t| {
            if t.observations.len() < 2 {
                filtered += t.observations.len();
                false
            } else {
                true
            }
        });
        removed_total += filtered;
        if removed_total * 2 > total_initial {
            return Err(BaError::TooFewObservations {
                removed: removed_total,
                total: total_initial,
            });
        }
        stats.push(BARoundStats {
            round,
            threshold_px: threshold,
            observations_before: before,
            filtered,
            rms_px: current.rms_reprojection_error(1e3),
        });
    }
    // Final polish after the last filtering pass.
    let (fin, s) = bundle_adjust(&current, opts)?;
    current = fin;
    if let Some(last) = stats.last_mut() {
        last.rms_px = s.final_rms_px;
    }
    Ok((current, stats))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{umeyama_alignment, Rotation};
    use crate::synth::{corrupt_observations, generate_scene, Layout as SceneLayout, NoiseSpec};
    use crate::tracks::Observation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn recon_from_scene(
        scene: &crate::synth::Scene,
        noise: &NoiseSpec,
        perturb: Option<&NoiseSpec>,
    ) -> Reconstruction {
        let obs = corrupt_observations(scene, noise);
        let poses = match perturb {
            Some(spec) => crate::synth::perturb_poses(scene, spec),
            None => scene.poses(),
        };
        Reconstruction {
            intrinsics: scene.cameras.iter().enumerate().map(|(i, c)| (i, c.intrinsics)).collect(),
            poses: poses.into_iter().enumerate().collect(),
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
                        .map(|o| Observation {
                            image: o.camera,
                            keypoint: o.keypoint,
                            pixel: obs.keypoints[o.camera][o.keypoint].pixel,
                        })
                        .collect(),
                })
                .collect(),
            anchor: 0,
        }
    }

    #[test]
    fn residual_basics() {
        let k = CameraIntrinsics::centered(100.0, 200, 200);
        let pose = Pose::identity();
        let x = Vector3::new(0.2, -0.1, 2.0);
        let px = crate::geom::project(&k, &pose, &x).unwrap();
        let r = reprojection_residual(&k, &pose, &x, &px).unwrap();
        assert_eq!(r, Vector2::zeros());

        // Displacement along camera x by eps at depth z moves the residual
        // by ~ f*eps/z in x.
        let eps = 1e-4;
        let r2 = reprojection_residual(&k, &pose, &(x + Vector3::new(eps, 0.0, 0.0)), &px).unwrap();
        assert!((r2.x - 100.0 * eps / 2.0).abs() < 1e-8);
        assert!(r2.y.abs() < 1e-12);

        assert!(reprojection_residual(&k, &pose, &Vector3::new(0.0, 0.0, -1.0), &px).is_err());
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(131);
        for _ in 0..100 {
            let k = CameraIntrinsics::centered(rng.random_range(80.0..300.0), 200, 200);
            let pose = Pose::new(
                Rotation::random(&mut rng),
                Vector3::new(
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                    rng.random_range(-0.5..0.5),
                ),
            );
            // Point in front of the camera.
            let p_cam = Vector3::new(
                rng.random_range(-0.5..0.5),
                rng.random_range(-0.5..0.5),
                rng.random_range(1.0..5.0),
            );
            let x = pose.inverse().transform(&p_cam);
            let obs = crate::geom::project(&k, &pose, &x).unwrap();
            let (j_pose, j_point, j_focal) = reprojection_jacobians(&k, &pose, &x).unwrap();

            let h = 1e-6;
            let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
            for c in 0..6 {
                let mut tp = Twist::zeros();
                tp[c] = h;
                let mut tm = Twist::zeros();
                tm[c] = -h;
                let rp = reprojection_residual(&k, &se3_compose(&pose, &tp), &x, &obs).unwrap();
                let rm = reprojection_residual(&k, &se3_compose(&pose, &tm), &x, &obs).unwrap();
                let fd = (rp - rm) / (2.0 * h);
                assert!(rel(fd.x, j_pose[(0, c)]) < 1e-5, "pose col {c}");
                assert!(rel(fd.y, j_pose[(1, c)]) < 1e-5, "pose col {c}");
            }
            for c in 0..3 {
                let mut dx = Vector3::zeros();
                dx[c] = h;
                let rp = reprojection_residual(&k, &pose, &(x + dx), &obs).unwrap();
                let rm = reprojection_residual(&k, &pose, &(x - dx), &obs).unwrap();
                let fd = (rp - rm) / (2.0 * h);
                assert!(rel(fd.x, j_point[(0, c)]) < 1e-5, "point col {c}");
                assert!(rel(fd.y, j_point[(1, c)]) < 1e-5, "point col {c}");
            }
            let mut kp = k;
            kp.fx += h;
            kp.fy += h;
            let mut km = k;
            km.fx -= h;
            km.fy -= h;
            let rp = reprojection_residual(&kp, &pose, &x, &obs).unwrap();
            let rm = reprojection_residual(&km, &pose, &x, &obs).unwrap();
            let fd = (rp - rm) / (2.0 * h);
            assert!(rel(fd.x, j_focal.x) < 1e-5);
            assert!(rel(fd.y, j_focal.y) < 1e-5);
        }
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let scene = generate_scene(8, 150, SceneLayout::Orbit, 41).unwrap();
        let recon = recon_from_scene(&scene, &NoiseSpec::clean(41), None);
        let (out, stats) = bundle_adjust(&recon, &BAOptions::default()).unwrap();
        assert!(stats.final_rms_px < 1e-9, "rms {}", stats.final_rms_px);
        // No meaningful parameter motion.
        for (cam, pose) in &out.poses {
            assert!(
                (pose.translation - recon.poses[cam].translation).norm() < 1e-9
            );
        }
    }

    #[test]
    fn anchor_pose_is_bit_identical() {
        let scene = generate_scene(8, 150, SceneLayout::Orbit, 43).unwrap();
        let noise = NoiseSpec { pixel_sigma: 0.5, ..NoiseSpec::clean(43) };
        let recon = recon_from_scene(&scene, &noise, None);
        let (out, _) = bundle_adjust(&recon, &BAOptions::default()).unwrap();
        assert_eq!(out.poses[&0].translation, recon.poses[&0].translation);
        assert_eq!(
            out.poses[&0].rotation.matrix(),
            recon.poses[&0].rotation.matrix()
        );
    }

    #[test]
    fn perturbed_poses_recover_ground_truth() {
        let scene = generate_scene(10, 200, SceneLayout::Orbit, 47).unwrap();
        let perturb = NoiseSpec {
            pose_rotation_perturb_deg: 0.5,
            pose_translation_perturb: 0.005,
            ..NoiseSpec::clean(47)
        };
        let recon = recon_from_scene(&scene, &NoiseSpec::clean(47), Some(&perturb));
        let (out, stats) = bundle_adjust(&recon, &BAOptions::default()).unwrap();
        assert!(stats.final_rms_px < 1e-6, "rms {}", stats.final_rms_px);

        // Align and compare.
        let est: Vec<Vector3<f64>> = (0..10).map(|i| out.poses[&i].center()).collect();
        let gt: Vec<Vector3<f64>> = scene.cameras.iter().map(|c| c.pose.center()).collect();
        let sim = umeyama_alignment(&est, &gt, true).unwrap();
        for (i, (e, g)) in est.iter().zip(&gt).enumerate() {
            assert!((sim.apply(e) - g).norm() < 1e-5, "camera {i}");
        }
        for i in 0..10 {
            let r_aligned = sim.rotation * out.poses[&i].rotation.transpose();
            let gt_r = scene.cameras[i].pose.rotation.transpose();
            let ang = r_aligned.angle_to(&gt_r).to_degrees();
            assert!(ang < 1e-4, "camera {i} rotation {ang} deg");
        }

        // LM trace is monotone.
        for w in stats.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-15);
        }
    }

    #[test]
    fn planted_outlier_is_downweighted() {
        let scene = generate_scene(8, 120, SceneLayout::Orbit, 53).unwrap();
        let perturb = NoiseSpec {
            pose_rotation_perturb_deg: 0.2,
            pose_translation_perturb: 0.002,
            ..NoiseSpec::clean(53)
        };
        let noise = NoiseSpec { pixel_sigma: 0.3, ..NoiseSpec::clean(53) };
        let clean = recon_from_scene(&scene, &noise, Some(&perturb));
        let mut poisoned = clean.clone();
        // One observation displaced by 50 px.
        poisoned.tracks[0].observations[0].pixel += Vector2::new(50.0, 0.0);

        let opts = BAOptions { huber_delta_px: 1.0, ..BAOptions::default() };
        let (out_clean, _) = bundle_adjust(&clean, &opts).unwrap();
        let (out_poisoned, _) = bundle_adjust(&poisoned, &opts).unwrap();

        // IRLS weight of the outlier observation at the solution.
        let kernel = RobustKernel::huber(1.0);
        let t = &out_poisoned.tracks[0];
        let o = &t.observations[0];
        let r = reprojection_residual(
            &out_poisoned.intrinsics[&o.image],
            &out_poisoned.poses[&o.image],
            &t.point.unwrap(),
            &o.pixel,
        )
        .unwrap();
        let (_, w) = robust_loss(&kernel, r.norm_squared());
        assert!(w < 0.05, "outlier weight {w}");

        // Pose error no more than twice the clean run's.
        let err = |out: &Reconstruction| -> f64 {
            (0..8)
                .map(|i| {
                    out.poses[&i]
                        .rotation
                        .angle_to(&scene.cameras[i].pose.rotation)
                })
                .sum::<f64>()
        };
        let (e_clean, e_poisoned) = (err(&out_clean), err(&out_poisoned));
        assert!(
            e_poisoned <= 2.0 * e_clean.max(1e-9),
            "clean {e_clean} poisoned {e_poisoned}"
        );
    }

    #[test]
    fn filtering_removes_planted_outliers_only() {
        let scene = generate_scene(10, 150, SceneLayout::Orbit, 59).unwrap();
        let noise = NoiseSpec { pixel_sigma: 0.5, ..NoiseSpec::clean(59) };
        let mut recon = recon_from_scene(&scene, &noise, None);
        // Plant outliers on 10% of tracks (first observation pushed far).
        let mut rng = ChaCha8Rng::seed_from_u64(59);
        let mut planted = Vec::new();
        for ti in 0..recon.tracks.len() {
            if rng.random_range(0.0..1.0) < 0.1 {
                let o = &mut recon.tracks[ti].observations[0];
                o.pixel += Vector2::new(rng.random_range(15.0..30.0), rng.random_range(10.0..20.0));
                planted.push((ti, o.image, o.keypoint));
            }
        }
        let total_before = recon.observation_count();
        let (out, stats) = iterate_ba_with_filtering(&recon, &BAOptions::default()).unwrap();
        let filtered: usize = stats.iter().map(|s| s.filtered).sum();
        assert!(filtered >= planted.len(), "filtered {filtered} < planted {}", planted.len());
        // Every planted outlier is gone.
        for (ti, image, keypoint) in &planted {
            let survives = out.tracks.iter().any(|t| {
                t.observations
                    .iter()
                    .any(|o| o.image == *image && o.keypoint == *keypoint && t.id == *ti)
            });
            assert!(!survives, "planted outlier survived");
        }
        // Only a negligible number of clean observations lost (through
        // track starvation).
        assert!(total_before - out.observation_count() <= planted.len() + planted.len());
        assert!(stats.last().unwrap().rms_px <= 2.0);
    }

    #[test]
    fn clean_data_filters_nothing() {
        let scene = generate_scene(8, 100, SceneLayout::Orbit, 61).unwrap();
        let recon = recon_from_scene(&scene, &NoiseSpec::clean(61), None);
        let (_, stats) = iterate_ba_with_filtering(&recon, &BAOptions::default()).unwrap();
        assert!(stats.iter().all(|s| s.filtered == 0));
    }

    #[test]
    fn all_outliers_is_too_few_observations() {
        let scene = generate_scene(6, 60, SceneLayout::Orbit, 67).unwrap();
        let mut recon = recon_from_scene(&scene, &NoiseSpec::clean(67), None);
        let mut rng = ChaCha8Rng::seed_from_u64(67);
        for t in &mut recon.tracks {
            for o in &mut t.observations {
                o.pixel = Vector2::new(rng.random_range(0.0..64.0), rng.random_range(0.0..64.0));
            }
        }
        assert!(matches!(
            iterate_ba_with_filtering(&recon, &BAOptions::default()),
            Err(BaError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn schur_step_equals_dense_step() {
        let scene = generate_scene(5, 20, SceneLayout::Orbit, 71).unwrap();
        let perturb = NoiseSpec {
            pose_rotation_perturb_deg: 0.3,
            pose_translation_perturb: 0.003,
            ..NoiseSpec::clean(71)
        };
        let recon = recon_from_scene(&scene, &NoiseSpec::clean(71), Some(&perturb));
        let layout = build_layout(&recon, &BAOptions::default());
        let solved: Vec<usize> = (0..recon.tracks.len()).collect();
        let kernel = RobustKernel::huber(2.0);
        let sys = assemble(&recon, &layout, &solved, &kernel, &BAOptions::default());
        for lambda in [1e-6, 1e-3, 1.0] {
            let a = sys.solve_schur(lambda).unwrap();
            let b = sys.solve_dense(lambda).unwrap();
            assert!((a.reduced - b.reduced).norm() < 1e-8, "lambda {lambda}");
            for (pa, pb) in a.points.iter().zip(&b.points) {
                assert!((pa - pb).norm() < 1e-8);
            }
        }
    }
}
