use super::five_point::five_point_candidates;
use super::fundamental::{eight_point, sampson_distance_sq};
use super::ransac::{ransac, RansacOptions};
use super::{Match, ViewGraphError};
use crate::geom::{ray_angle, skew, triangulate_midpoint, CameraIntrinsics, Rotation};
use nalgebra::{Matrix3, Vector2, Vector3};

/// A verified two-view geometry: `x_b = R_ab x_a + s * t_ab` in camera
/// frames, with `t_ab` a unit direction.
#[derive(Debug, Clone)]
pub struct ViewGraphEdge {
    pub image_a: usize,
    pub image_b: usize,
    /// Fundamental matrix (`x_b^T F x_a = 0`), unit Frobenius norm, rank 2.
    pub fundamental: Matrix3<f64>,
    pub rotation: Rotation,
    pub translation_dir: Vector3<f64>,
    /// Indices into the pair's match list.
    pub inliers: Vec<usize>,
    pub inlier_count: usize,
    /// Median triangulation angle below the low-parallax cut: the edge is
    /// usable for rotation averaging but not for positioning.
    pub low_parallax: bool,
    pub median_parallax_deg: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EssentialSolver {
    /// Minimal five-point solver (default).
    FivePoint,
    /// Normalized eight-point with essential projection; debugging fallback.
    EightPoint,
}

#[derive(Debug, Clone, Copy)]
pub struct TwoViewOptions {
    pub ransac: RansacOptions,
    pub solver: EssentialSolver,
    /// Median triangulation angle (degrees) below which an edge is flagged.
    pub low_parallax_deg: f64,
    /// Minimum cheirality-vote margin between the best and second-best
    /// candidate decomposition.
    pub min_cheirality_margin: usize,
}

impl Default for TwoViewOptions {
    fn default() -> Self {
        TwoViewOptions {
            ransac: RansacOptions::default(),
            solver: EssentialSolver::FivePoint,
            low_parallax_deg: 1.0,
            min_cheirality_margin: 2,
        }
    }
}

/// Projects a 3x3 matrix to the closest essential matrix (two equal
/// singular values, one zero).
fn to_essential(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let svd = m.svd(true, true);
    let s = (svd.singular_values[0] + svd.singular_values[1]) * 0.5;
    let e = svd.u? * Matrix3::from_diagonal(&Vector3::new(s, s, 0.0)) * svd.v_t?;
    let n = e.norm();
    if n < 1e-15 {
        return None;
    }
    Some(e / n)
}

/// Estimates the relative pose of an image pair from its matches, using an
/// essential-matrix RANSAC with cheirality voting to pick the decomposition.
pub fn estimate_relative_pose(
    matches: &[Match],
    k_a: &CameraIntrinsics,
    k_b: &CameraIntrinsics,
    opts: &TwoViewOptions,
) -> Result<ViewGraphEdge, ViewGraphError> {
    let min_sample = match opts.solver {
        EssentialSolver::FivePoint => 5,
        EssentialSolver::EightPoint => 8,
    };
    if matches.len() < min_sample {
        return Err(ViewGraphError::DegenerateConfiguration {
            what: format!("{} matches, need {min_sample}", matches.len()),
        });
    }

    let ka_inv = k_a.k_inverse();
    let kb_inv = k_b.k_inverse();
    // Normalized homogeneous coordinates (z = 1).
    let na: Vec<Vector3<f64>> = matches
        .iter()
        .map(|m| ka_inv * Vector3::new(m.point_a.x, m.point_a.y, 1.0))
        .collect();
    let nb: Vec<Vector3<f64>> = matches
        .iter()
        .map(|m| kb_inv * Vector3::new(m.point_b.x, m.point_b.y, 1.0))
        .collect();
    let a_px: Vec<Vector2<f64>> = matches.iter().map(|m| m.point_a).collect();
    let b_px: Vec<Vector2<f64>> = matches.iter().map(|m| m.point_b).collect();

    // Scoring in pixels: Sampson distance on F = K_b^-T E K_a^-1.
    let to_f = |e: &Matrix3<f64>| kb_inv.transpose() * e * ka_inv;
    let residual = |e: &Matrix3<f64>, i: usize| sampson_distance_sq(&to_f(e), &a_px[i], &b_px[i]);

    let solve = |sample: &[usize]| -> Vec<Matrix3<f64>> {
        match opts.solver {
            EssentialSolver::FivePoint => {
                let s1 = [na[sample[0]], na[sample[1]], na[sample[2]], na[sample[3]], na[sample[4]]];
                let s2 = [nb[sample[0]], nb[sample[1]], nb[sample[2]], nb[sample[3]], nb[sample[4]]];
                five_point_candidates(&s1, &s2)
            }
            EssentialSolver::EightPoint => {
                let sa: Vec<Vector2<f64>> = sample.iter().map(|&i| na[i].xy() / na[i].z).collect();
                let sb: Vec<Vector2<f64>> = sample.iter().map(|&i| nb[i].xy() / nb[i].z).collect();
                eight_point(&sa, &sb)
                    .and_then(|f| to_essential(&f))
                    .into_iter()
                    .collect()
            }
        }
    };

    let (mut best_e, mut inliers) =
        ransac(matches.len(), min_sample, &opts.ransac, solve, residual).ok_or_else(|| {
            ViewGraphError::DegenerateConfiguration { what: "no valid essential candidate".into() }
        })?;

    // Linear refit on inliers, projected back to the essential manifold.
    if inliers.len() >= 8 {
        let ra: Vec<Vector2<f64>> = inliers.iter().map(|&i| na[i].xy() / na[i].z).collect();
        let rb: Vec<Vector2<f64>> = inliers.iter().map(|&i| nb[i].xy() / nb[i].z).collect();
        if let Some(refit) = eight_point(&ra, &rb).and_then(|f| to_essential(&f)) {
            let thresh_sq = opts.ransac.threshold_px * opts.ransac.threshold_px;
            let new_inliers: Vec<usize> = (0..matches.len())
                .filter(|&i| residual(&refit, i) < thresh_sq)
                .collect();
            if new_inliers.len() >= inliers.len() {
                best_e = refit;
                inliers = new_inliers;
            }
        }
    }

    // Decompose into the four (R, t) candidates and vote by cheirality.
    let svd = best_e.svd(true, true);
    let (u, v_t) = (
        svd.u.ok_or_else(|| ViewGraphError::DegenerateConfiguration { what: "svd failed".into() })?,
        svd.v_t.ok_or_else(|| ViewGraphError::DegenerateConfiguration { what: "svd failed".into() })?,
    );
    let w = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
    let fix = |m: Matrix3<f64>| if m.determinant() < 0.0 { -m } else { m };
    let r1 = fix(u * w * v_t);
    let r2 = fix(u * w.transpose() * v_t);
    let t = u.column(2).into_owned();

    let mut tallies: Vec<(usize, Matrix3<f64>, Vector3<f64>, Vec<f64>)> = Vec::new();
    for (r, tdir) in [(r1, t), (r1, -t), (r2, t), (r2, -t)] {
        let c2 = -(r.transpose() * tdir);
        let mut votes = 0usize;
        let mut angles = Vec::new();
        for &i in &inliers {
            let d1 = na[i];
            let d2 = r.transpose() * nb[i];
            let Some(x) = triangulate_midpoint(&Vector3::zeros(), &d1, &c2, &d2) else {
                continue;
            };
            let depth1 = x.z;
            let depth2 = (r * x + tdir).z;
            if depth1 > 0.0 && depth2 > 0.0 {
                votes += 1;
                angles.push(ray_angle(&x, &(x - c2)).to_degrees());
            }
        }
        tallies.push((votes, r, tdir, angles));
    }
    tallies.sort_by(|a, b| b.0.cmp(&a.0));
    let margin = tallies[0].0.saturating_sub(tallies[1].0);
    if margin < opts.min_cheirality_margin {
        return Err(ViewGraphError::CheiralityAmbiguous {
            best: tallies[0].0,
            second: tallies[1].0,
        });
    }
    let (_, r, tdir, mut angles) = tallies.swap_remove(0);

    angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median_parallax_deg = if angles.is_empty() { 0.0 } else { angles[angles.len() / 2] };

    let f = to_f(&best_e);
    Ok(ViewGraphEdge {
        image_a: matches[0].image_a,
        image_b: matches[0].image_b,
        fundamental: f / f.norm(),
        rotation: Rotation::nearest(&r),
        translation_dir: tdir.normalize(),
        inlier_count: inliers.len(),
        inliers,
        low_parallax: median_parallax_deg < opts.low_parallax_deg,
        median_parallax_deg,
    })
}

/// Essential matrix from a rotation and unit translation, `E = [t]x R`.
pub fn essential_from_pose(rotation: &Rotation, t_dir: &Vector3<f64>) -> Matrix3<f64> {
    let e = skew(t_dir) * rotation.matrix();
    e / e.norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{project, Pose};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn make_pair(
        rng: &mut impl Rng,
        pose_b: &Pose,
        n: usize,
        noise: f64,
    ) -> (Vec<Match>, CameraIntrinsics) {
        let k = CameraIntrinsics::centered(300.0, 640, 480);
        let mut matches = Vec::new();
        while matches.len() < n {
            let p = Vector3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(4.0..8.0),
            );
            let (Ok(mut pa), Ok(mut pb)) =
                (project(&k, &Pose::identity(), &p), project(&k, pose_b, &p))
            else {
                continue;
            };
            if !k.contains(&pa) || !k.contains(&pb) {
                continue;
            }
            pa += Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * noise;
            pb += Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * noise;
            matches.push(Match {
                image_a: 0,
                image_b: 1,
                keypoint_a: matches.len(),
                keypoint_b: matches.len(),
                point_a: pa,
                point_b: pb,
            });
        }
        (matches, k)
    }

    #[test]
    fn noise_free_relative_pose_is_tight() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let rot = Rotation::from_axis_angle(&Vector3::new(0.1, 1.0, 0.2), 0.2);
        let t = Vector3::new(1.0, 0.1, 0.05).normalize();
        let pose_b = Pose::new(rot, t);
        let (matches, k) = make_pair(&mut rng, &pose_b, 60, 0.0);
        let edge =
            estimate_relative_pose(&matches, &k, &k, &TwoViewOptions::default()).unwrap();
        let ang = edge.rotation.angle_to(&rot).to_degrees();
        assert!(ang < 0.01, "rotation error {ang} deg");
        let dir_err = ray_angle(&edge.translation_dir, &t).to_degrees();
        assert!(dir_err < 0.05, "direction error {dir_err} deg");
        assert!((edge.translation_dir.norm() - 1.0).abs() < 1e-9);
        assert!(!edge.low_parallax);
    }

    #[test]
    fn pure_rotation_is_ambiguous_or_low_parallax() {
        let mut rng = ChaCha8Rng::seed_from_u64(72);
        let rot = Rotation::from_axis_angle(&Vector3::new(0.0, 1.0, 0.0), 0.15);
        let pose_b = Pose::new(rot, Vector3::zeros());
        let (matches, k) = make_pair(&mut rng, &pose_b, 60, 0.0);
        match estimate_relative_pose(&matches, &k, &k, &TwoViewOptions::default()) {
            Err(ViewGraphError::CheiralityAmbiguous { .. }) => {}
            Err(ViewGraphError::DegenerateConfiguration { .. }) => {}
            Ok(edge) => assert!(edge.low_parallax, "pure rotation must be flagged"),
            Err(e) => panic!("unexpected error {e:?}"),
        }
    }

    #[test]
    fn mirrored_matches_give_inverse_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(73);
        let rot = Rotation::from_axis_angle(&Vector3::new(0.3, 0.8, -0.1), 0.25);
        let t = Vector3::new(0.7, -0.3, 0.2).normalize();
        let pose_b = Pose::new(rot, t);
        let (matches, k) = make_pair(&mut rng, &pose_b, 80, 0.0);
        let swapped: Vec<Match> = matches
            .iter()
            .map(|m| Match {
                image_a: m.image_b,
                image_b: m.image_a,
                keypoint_a: m.keypoint_b,
                keypoint_b: m.keypoint_a,
                point_a: m.point_b,
                point_b: m.point_a,
            })
            .collect();
        let fwd = estimate_relative_pose(&matches, &k, &k, &TwoViewOptions::default()).unwrap();
        let rev = estimate_relative_pose(&swapped, &k, &k, &TwoViewOptions::default()).unwrap();
        // Inverse: R_ba = R_ab^T, t_ba = -R_ab^T t_ab.
        let r_err = rev.rotation.angle_to(&fwd.rotation.transpose()).to_degrees();
        assert!(r_err < 0.1, "rotation inverse error {r_err}");
        let t_expect = -(fwd.rotation.apply_inverse(&fwd.translation_dir));
        let t_err = ray_angle(&rev.translation_dir, &t_expect).to_degrees();
        assert!(t_err < 0.1, "translation inverse error {t_err}");
    }

    #[test]
    fn eight_point_fallback_matches_five_point() {
        let mut rng = ChaCha8Rng::seed_from_u64(74);
        let rot = Rotation::from_axis_angle(&Vector3::new(0.0, 1.0, 0.3), 0.3);
        let t = Vector3::new(0.9, 0.2, 0.1).normalize();
        let pose_b = Pose::new(rot, t);
        let (matches, k) = make_pair(&mut rng, &pose_b, 60, 0.0);
        let opts8 = TwoViewOptions { solver: EssentialSolver::EightPoint, ..Default::default() };
        let edge = estimate_relative_pose(&matches, &k, &k, &opts8).unwrap();
        assert!(edge.rotation.angle_to(&rot).to_degrees() < 0.05);
    }
}
