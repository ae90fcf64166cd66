use super::colmap::{export_colmap_text, import_colmap_text};
use super::config::PipelineConfig;
use super::metrics::{ate, rotation_error, MetricsRecord};
use crate::ba::{iterate_ba_with_filtering, BAOptions, BARoundStats, Reconstruction};
use crate::geom::Pose;
use crate::globalpos::{baselines_from_edges, solve_positions, PositioningOptions, PositioningProblem};
use crate::img::{read_ppm, write_ppm, ImageBuffer};
use crate::joint::{
    evaluate_state, joint_optimize, load_checkpoint, save_checkpoint, write_loss_trace,
};
use crate::rotavg::{init_rotations_mst, refine_rotations_irls, RelativeRotation, RotAvgOptions};
use crate::splat::init_gaussians_from_points;
use crate::synth::{
    corrupt_observations, generate_scene_with, read_scene, render_reference_images, write_scene,
    NoiseSpec, Scene, SceneConfig,
};
use crate::tracks::{build_tracks, merge_tracks, MergeOptions, WeightedMatch};
use crate::viewgraph::{
    build_view_graph, estimate_edges, EssentialSolver, RansacOptions, TwoViewOptions,
};
use nalgebra::Vector3;
use std::collections::BTreeMap;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("[{stage}] {message}")]
    Stage { stage: &'static str, message: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

/// Generates the synthetic scene, its ground-truth Gaussian set, and one
/// reference image per camera.
pub fn run_synth_stage(config: &PipelineConfig, out_dir: &Path) -> Result<Scene, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let scene_cfg = SceneConfig::new(
        config.synth.n_cameras,
        config.synth.n_points,
        config.synth.layout,
        config.seed,
    )
    .with_image_size(config.synth.image_size, config.synth.image_size);
    let scene = generate_scene_with(&scene_cfg).map_err(stage_err("synth"))?;
    write_scene(&out_dir.join("scene.txt"), &scene).map_err(stage_err("synth"))?;

    let pts: Vec<(Vector3<f64>, [f64; 3])> =
        scene.points.iter().map(|p| (p.position, p.color)).collect();
    let gaussians =
        init_gaussians_from_points(&pts, config.joint.sh_degree).map_err(stage_err("synth"))?;
    let images = render_reference_images(
        &scene,
        &gaussians,
        (config.synth.image_size, config.synth.image_size),
    );
    let img_dir = out_dir.join("images");
    std::fs::create_dir_all(&img_dir)?;
    for (i, img) in images.iter().enumerate() {
        write_ppm(&img_dir.join(format!("cam_{i:04}.ppm")), img).map_err(stage_err("synth"))?;
    }
    Ok(scene)
}

#[derive(Debug, serde::Serialize)]
pub struct SfmStats {
    pub cameras: usize,
    pub pairs: usize,
    pub edges: usize,
    pub edge_failures: usize,
    pub tracks: usize,
    pub positioned_tracks: usize,
    pub ba_rounds: Vec<BARoundStats>,
    pub final_rms_px: f64,
}

/// Runs global SfM from either the synthetic scene on disk or an external
/// match directory, and exports the reconstruction as COLMAP text.
pub fn run_sfm_stage(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<(Reconstruction, SfmStats), PipelineError> {
    // Ingest matches and intrinsics.
    let (matches, intrinsics) = if let Some(match_dir) = &config.match_dir {
        let ms =
            crate::viewgraph::read_matches(&match_dir.join("matches.txt")).map_err(stage_err("sfm"))?;
        let ext = import_colmap_text(match_dir).map_err(stage_err("sfm"))?;
        (ms, ext.intrinsics)
    } else {
        let scene = read_scene(&out_dir.join("scene.txt")).map_err(stage_err("sfm"))?;
        let noise = NoiseSpec {
            pixel_sigma: config.noise.pixel_sigma,
            outlier_fraction: config.noise.outlier_fraction,
            pose_rotation_perturb_deg: 0.0,
            pose_translation_perturb: 0.0,
            seed: config.seed,
        };
        let obs = corrupt_observations(&scene, &noise);
        let intrinsics: BTreeMap<usize, crate::geom::CameraIntrinsics> =
            scene.cameras.iter().enumerate().map(|(i, c)| (i, c.intrinsics)).collect();
        (obs.all_matches(), intrinsics)
    };

    // View graph on the largest connected component.
    let mut graph =
        build_view_graph(&matches, config.sfm.min_matches_per_pair).map_err(stage_err("sfm"))?;
    graph.restrict_to_largest_component();
    let n_pairs = graph.pairs.len();

    let two_view = TwoViewOptions {
        ransac: RansacOptions {
            threshold_px: config.sfm.ransac_threshold_px,
            max_iters: config.sfm.ransac_max_iters,
            confidence: 0.999,
            seed: 0, // per-pair seeds derive from the pipeline seed
        },
        solver: if config.sfm.eight_point_fallback {
            EssentialSolver::EightPoint
        } else {
            EssentialSolver::FivePoint
        },
        low_parallax_deg: config.sfm.min_parallax_deg,
        min_cheirality_margin: 2,
    };

    // Optional focal estimation from pairwise fundamental matrices.
    let mut intrinsics = intrinsics;
    if config.sfm.estimate_focal {
        let mut f_edges = Vec::new();
        for pair in &graph.pairs {
            let seed = crate::synth::rng::derive_seed(
                config.seed,
                crate::synth::rng::StreamKind::Ransac,
                (pair.image_a as u64) << 32 | pair.image_b as u64 | 1 << 63,
            );
            if let Ok((f, _)) = crate::viewgraph::estimate_fundamental_ransac(
                &pair.matches,
                config.sfm.ransac_threshold_px,
                config.sfm.ransac_max_iters,
                seed,
            ) {
                f_edges.push(crate::viewgraph::FundamentalEdge {
                    image_a: pair.image_a,
                    image_b: pair.image_b,
                    fundamental: f,
                });
            }
        }
        let cams: Vec<usize> = intrinsics.keys().copied().collect();
        let reindex: BTreeMap<usize, usize> =
            cams.iter().enumerate().map(|(i, &c)| (c, i)).collect();
        for e in &mut f_edges {
            e.image_a = reindex[&e.image_a];
            e.image_b = reindex[&e.image_b];
        }
        let pps: Vec<nalgebra::Vector2<f64>> =
            cams.iter().map(|c| nalgebra::Vector2::new(intrinsics[c].cx, intrinsics[c].cy)).collect();
        let initial = intrinsics[&cams[0]].fx;
        match crate::viewgraph::estimate_focal_fetzer(
            &f_edges,
            cams.len(),
            initial,
            &pps,
            true,
            &crate::viewgraph::FetzerOptions::default(),
        ) {
            Ok(focals) => {
                for (i, c) in cams.iter().enumerate() {
                    let k = intrinsics.get_mut(c).unwrap();
                    k.fx = focals[i];
                    k.fy = focals[i];
                }
            }
            Err(_) => { /* fall back to the provided focals */ }
        }
    }

    // Relative poses.
    let (edges, failures) = estimate_edges(&graph, &intrinsics, &two_view, config.seed);
    if edges.is_empty() {
        return Err(PipelineError::Stage {
            stage: "sfm",
            message: "no two-view geometry could be estimated".into(),
        });
    }

    // Rotation averaging.
    let rel: Vec<RelativeRotation> = edges
        .iter()
        .map(|e| RelativeRotation {
            a: e.image_a,
            b: e.image_b,
            rotation: e.rotation,
            weight: e.inlier_count as f64,
        })
        .collect();
    let anchor = *graph.vertices.first().ok_or(PipelineError::Stage {
        stage: "sfm",
        message: "empty view graph".into(),
    })?;
    let init = init_rotations_mst(&rel, anchor).map_err(stage_err("sfm"))?;
    let (rotations, _) = refine_rotations_irls(&rel, &init, anchor, &RotAvgOptions::default());

    // Tracks from inlier matches.
    let mut weighted = Vec::new();
    for (edge, pair) in edges.iter().zip(graph.pairs.iter().filter(|p| {
        edges.iter().any(|e| e.image_a == p.image_a && e.image_b == p.image_b)
    })) {
        // edges were produced in pair order for successful pairs.
        debug_assert_eq!((edge.image_a, edge.image_b), (pair.image_a, pair.image_b));
        for &mi in &edge.inliers {
            weighted.push(WeightedMatch { m: pair.matches[mi], edge_weight: edge.inlier_count as f64 });
        }
    }
    let tracks = build_tracks(&weighted);

    // Positioning with rotations fixed.
    let baselines = baselines_from_edges(&edges, &rotations);
    let problem = PositioningProblem {
        rotations: rotations.clone(),
        intrinsics: intrinsics.clone(),
        tracks,
        baselines,
        anchor,
    };
    let positioning = solve_positions(&problem, &PositioningOptions {
        min_parallax_deg: config.sfm.min_parallax_deg,
        ..PositioningOptions::default()
    })
    .map_err(stage_err("sfm"))?;

    let poses: BTreeMap<usize, Pose> = rotations
        .iter()
        .map(|(&cam, r)| (cam, Pose::new(*r, positioning.translations[&cam])))
        .collect();
    let mut tracks = problem.tracks.clone();
    for (t, p) in tracks.iter_mut().zip(&positioning.points) {
        t.point = *p;
    }
    let positioned = tracks.iter().filter(|t| t.point.is_some()).count();

    // Reprojection-proximity merge, then iterated robust BA.
    let solved: Vec<crate::tracks::Track> =
        tracks.into_iter().filter(|t| t.point.is_some()).collect();
    let merged = merge_tracks(
        &solved,
        &intrinsics,
        &poses,
        &MergeOptions { merge_px: config.sfm.merge_px, max_distance: 0.01 },
    );

    let recon = Reconstruction { intrinsics, poses, tracks: merged, anchor };
    let ba_opts = BAOptions {
        huber_delta_px: config.sfm.huber_delta_px,
        filter_thresholds_px: config.sfm.filter_thresholds_px.clone(),
        optimize_intrinsics: config.sfm.optimize_intrinsics,
        ..BAOptions::default()
    };
    let (recon, rounds) = iterate_ba_with_filtering(&recon, &ba_opts).map_err(stage_err("sfm"))?;

    // Export and stats.
    let sfm_dir = out_dir.join("sfm");
    let colors = track_colors(&recon, out_dir).map(|c| c.iter().map(|&c| quantize(c)).collect::<Vec<[u8; 3]>>());
    export_colmap_text(&recon, colors.as_deref(), &sfm_dir).map_err(stage_err("sfm"))?;
    let stats = SfmStats {
        cameras: recon.poses.len(),
        pairs: n_pairs,
        edges: edges.len(),
        edge_failures: failures.len(),
        tracks: recon.tracks.len(),
        positioned_tracks: positioned,
        ba_rounds: rounds,
        final_rms_px: recon.rms_reprojection_error(1e3),
    };
    std::fs::write(
        out_dir.join("sfm_stats.json"),
        serde_json::to_string_pretty(&stats).expect("serializable"),
    )?;
    Ok((recon, stats))
}

fn quantize(c: [f64; 3]) -> [u8; 3] {
    [
        (c[0].clamp(0.0, 1.0) * 255.0).round() as u8,
        (c[1].clamp(0.0, 1.0) * 255.0).round() as u8,
        (c[2].clamp(0.0, 1.0) * 255.0).round() as u8,
    ]
}

/// Mean reference-image color at each solved track's observations; `None`
/// outside the synthetic path (no reference images on disk).
fn track_colors(recon: &Reconstruction, out_dir: &Path) -> Option<Vec<[f64; 3]>> {
    let img_dir = out_dir.join("images");
    if !img_dir.exists() {
        return None;
    }
    let mut cache: BTreeMap<usize, ImageBuffer> = BTreeMap::new();
    let mut out = Vec::new();
    for t in &recon.tracks {
        if t.point.is_none() {
            continue;
        }
        let mut acc = [0.0f64; 3];
        let mut n = 0usize;
        for o in &t.observations {
            let img = match cache.entry(o.image) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(v) => {
                    let img = read_ppm(&img_dir.join(format!("cam_{:04}.ppm", o.image))).ok()?;
                    v.insert(img)
                }
            };
            let x = (o.pixel.x.floor() as usize).min(img.width() - 1);
            let y = (o.pixel.y.floor() as usize).min(img.height() - 1);
            let px = img.pixel(x, y);
            for c in 0..3 {
                acc[c] += px[c];
            }
            n += 1;
        }
        out.push([acc[0] / n as f64, acc[1] / n as f64, acc[2] / n as f64]);
    }
    Some(out)
}

/// Joint refinement from the exported SfM reconstruction and the rendered
/// reference images.
pub fn run_joint_stage(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<crate::joint::JointRun, PipelineError> {
    let recon = import_colmap_text(&out_dir.join("sfm")).map_err(stage_err("joint"))?;
    let n_cams = recon.poses.len();
    let img_dir = out_dir.join("images");
    let images: Vec<ImageBuffer> = (0..n_cams)
        .map(|i| read_ppm(&img_dir.join(format!("cam_{i:04}.ppm"))).map_err(stage_err("joint")))
        .collect::<Result<_, _>>()?;

    let colors = track_colors(&recon, out_dir).ok_or(PipelineError::Stage {
        stage: "joint",
        message: "reference images missing".into(),
    })?;
    let solved: Vec<(Vector3<f64>, [f64; 3])> = recon
        .tracks
        .iter()
        .filter(|t| t.point.is_some())
        .zip(&colors)
        .map(|(t, c)| (t.point.unwrap(), *c))
        .collect();
    let gaussians =
        init_gaussians_from_points(&solved, config.joint.sh_degree).map_err(stage_err("joint"))?;

    // Scene extent from the SfM point cloud.
    let pts: Vec<Vector3<f64>> = solved.iter().map(|(p, _)| *p).collect();
    let centroid = pts.iter().sum::<Vector3<f64>>() / pts.len().max(1) as f64;
    let extent = pts.iter().map(|p| (p - centroid).norm()).fold(0.0, f64::max).max(1e-6);

    let state = crate::joint::JointState::from_reconstruction(&recon, gaussians);
    let jc = crate::joint::JointConfig {
        lambda_ba: config.joint.lambda_ba,
        huber_delta_px: config.joint.huber_delta_px,
        lambda_ssim: config.joint.lambda_ssim,
        lr_pose: config.joint.lr_pose,
        lr_position: config.joint.lr_position,
        lr_scale: config.joint.lr_scale,
        lr_rotation: config.joint.lr_rotation,
        lr_opacity: config.joint.lr_opacity,
        lr_sh: config.joint.lr_sh,
        lr_track_point: config.joint.lr_track_point,
        iterations: config.joint.iterations,
        batch_size: config.joint.batch_size,
        ablation: config.joint.ablation,
        seed: config.seed,
        scene_extent: extent,
        render: crate::splat::RenderOptions::default(),
        divergence_factor: 10.0,
    };
    let train = config.train_cameras(n_cams);
    let run = joint_optimize(&state, &images, &train, &jc).map_err(stage_err("joint"))?;

    let joint_dir = out_dir.join("joint");
    std::fs::create_dir_all(&joint_dir)?;
    save_checkpoint(&joint_dir.join("state.json"), &run.state)?;
    write_loss_trace(&joint_dir.join("trace.csv"), &run.trace)?;
    Ok(run)
}

/// Evaluates the joint state against ground truth and writes
/// `metrics.json` (deterministic) plus `timings.txt` (not).
pub fn run_eval_stage(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<MetricsRecord, PipelineError> {
    let state = load_checkpoint(&out_dir.join("joint/state.json")).map_err(stage_err("eval"))?;
    let scene = read_scene(&out_dir.join("scene.txt")).map_err(stage_err("eval"))?;
    let n_cams = state.base_poses.len();
    let img_dir = out_dir.join("images");
    let images: Vec<ImageBuffer> = (0..n_cams)
        .map(|i| read_ppm(&img_dir.join(format!("cam_{i:04}.ppm"))).map_err(stage_err("eval")))
        .collect::<Result<_, _>>()?;

    let holdout = config.holdout_cameras(n_cams);
    let gt_poses = scene.poses();
    let eval = evaluate_state(&state, &images, &holdout, Some(&gt_poses));

    let est = state.composed_poses();
    let rot = rotation_error(&est, &gt_poses).map_err(stage_err("eval"))?;
    let ate_val = ate(&est, &gt_poses).map_err(stage_err("eval"))?;
    let extent = scene.extent();

    // Reprojection RMS of the exported SfM reconstruction.
    let recon = import_colmap_text(&out_dir.join("sfm")).map_err(stage_err("eval"))?;
    let record = MetricsRecord {
        rotation_error_mean_deg: rot.mean_deg,
        rotation_error_median_deg: rot.median_deg,
        ate: ate_val,
        ate_fraction_extent: ate_val / extent,
        psnr_db: eval.mean_psnr,
        ssim: eval.mean_ssim,
        reprojection_rms_px: recon.rms_reprojection_error(1e3),
        stage_seconds: BTreeMap::new(),
    };
    record.assert_finite();
    std::fs::write(
        out_dir.join("metrics.json"),
        serde_json::to_string_pretty(&record).expect("serializable"),
    )?;
    std::fs::write(
        out_dir.join("eval.json"),
        serde_json::to_string_pretty(&eval).expect("serializable"),
    )?;
    Ok(record)
}

/// Exports the refined joint state (when present, otherwise the SfM
/// output) as COLMAP text under `export/`.
pub fn run_export_stage(out_dir: &Path) -> Result<(), PipelineError> {
    let export_dir = out_dir.join("export");
    let state_path = out_dir.join("joint/state.json");
    let recon = if state_path.exists() {
        let state = load_checkpoint(&state_path).map_err(stage_err("export"))?;
        let poses: BTreeMap<usize, Pose> =
            state.composed_poses().into_iter().enumerate().collect();
        let intrinsics: BTreeMap<usize, crate::geom::CameraIntrinsics> =
            state.intrinsics.iter().copied().enumerate().collect();
        let tracks: Vec<crate::tracks::Track> = state
            .tracks
            .iter()
            .zip(&state.track_points)
            .map(|(t, p)| crate::tracks::Track {
                id: t.id,
                point: Some(*p),
                observations: t.observations.clone(),
            })
            .collect();
        Reconstruction { intrinsics, poses, tracks, anchor: state.anchor }
    } else {
        import_colmap_text(&out_dir.join("sfm")).map_err(stage_err("export"))?
    };
    export_colmap_text(&recon, None, &export_dir).map_err(stage_err("export"))?;
    Ok(())
}

/// Runs all stages in order, writing every artifact under `out_dir`, and
/// returns the final metrics (with stage timings attached in memory).
pub fn run_pipeline(
    config: &PipelineConfig,
    out_dir: &Path,
) -> Result<MetricsRecord, PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let mut timings: BTreeMap<String, f64> = BTreeMap::new();
    let mut timed = |name: &str, t0: std::time::Instant| {
        timings.insert(name.to_string(), t0.elapsed().as_secs_f64());
    };

    if config.match_dir.is_none() {
        let t0 = std::time::Instant::now();
        run_synth_stage(config, out_dir)?;
        timed("synth", t0);
    }
    let t0 = std::time::Instant::now();
    run_sfm_stage(config, out_dir)?;
    timed("sfm", t0);

    let t0 = std::time::Instant::now();
    run_joint_stage(config, out_dir)?;
    timed("joint", t0);

    let t0 = std::time::Instant::now();
    let mut record = run_eval_stage(config, out_dir)?;
    timed("eval", t0);

    run_export_stage(out_dir)?;

    // Timings are logged separately so metrics.json stays byte-identical
    // across runs.
    let mut log = String::new();
    for (stage, secs) in &timings {
        log.push_str(&format!("{stage}: {secs:.3} s\n"));
    }
    std::fs::write(out_dir.join("timings.txt"), log)?;
    record.stage_seconds = timings;
    Ok(record)
}
