use super::ransac::{ransac, RansacOptions};
use super::{Match, ViewGraphError};
use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};

/// Hartley normalization: translate to the centroid and scale so the mean
/// distance from the origin is sqrt(2).
fn normalizing_transform(points: &[Vector2<f64>]) -> Matrix3<f64> {
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vector2<f64>>() / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let s = if mean_dist > 1e-12 { 2.0f64.sqrt() / mean_dist } else { 1.0 };
    Matrix3::new(s, 0.0, -s * centroid.x, 0.0, s, -s * centroid.y, 0.0, 0.0, 1.0)
}

/// Least-squares eight-point estimate on the given correspondences
/// (minimum 8), with Hartley normalization and rank-2 enforcement.
pub(crate) fn eight_point(
    a_pts: &[Vector2<f64>],
    b_pts: &[Vector2<f64>],
) -> Option<Matrix3<f64>> {
    let n = a_pts.len();
    if n < 8 {
        return None;
    }
    let ta = normalizing_transform(a_pts);
    let tb = normalizing_transform(b_pts);

    // Pad to square so the SVD exposes the full V factor.
    let rows = n.max(9);
    let mut m = DMatrix::<f64>::zeros(rows, 9);
    for i in 0..n {
        let pa = ta * Vector3::new(a_pts[i].x, a_pts[i].y, 1.0);
        let pb = tb * Vector3::new(b_pts[i].x, b_pts[i].y, 1.0);
        for r in 0..3 {
            for c in 0..3 {
                m[(i, r * 3 + c)] = pb[r] * pa[c];
            }
        }
    }
    let svd = m.svd(false, true);
    let v_t = svd.v_t?;
    let f_vec = v_t.row(8);
    let f = Matrix3::new(
        f_vec[0], f_vec[1], f_vec[2], f_vec[3], f_vec[4], f_vec[5], f_vec[6], f_vec[7], f_vec[8],
    );
    // Rank-2 projection.
    let svd_f = f.svd(true, true);
    let mut sigma = svd_f.singular_values;
    sigma[2] = 0.0;
    let f2 = svd_f.u? * Matrix3::from_diagonal(&sigma) * svd_f.v_t?;
    // Undo normalization: x_b^T F x_a with normalized coords means
    // F = T_b^T F' T_a.
    let f_full = tb.transpose() * f2 * ta;
    let norm = f_full.norm();
    if norm < 1e-15 {
        return None;
    }
    Some(f_full / norm)
}

/// Squared Sampson distance in pixels for `x_b^T F x_a = 0`.
pub fn sampson_distance_sq(f: &Matrix3<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> f64 {
    let xa = Vector3::new(a.x, a.y, 1.0);
    let xb = Vector3::new(b.x, b.y, 1.0);
    let fa = f * xa;
    let ftb = f.transpose() * xb;
    let r = xb.dot(&fa);
    let denom = fa.x * fa.x + fa.y * fa.y + ftb.x * ftb.x + ftb.y * ftb.y;
    if denom < 1e-300 {
        return f64::INFINITY;
    }
    r * r / denom
}

/// RANSAC fundamental-matrix estimation from a single pair's matches.
///
/// Minimal samples use the normalized eight-point solver; inliers are
/// scored by Sampson distance. The best model is refit on its inliers and
/// the refit is kept if it does not lose inliers.
pub fn estimate_fundamental_ransac(
    matches: &[Match],
    threshold_px: f64,
    max_iters: usize,
    seed: u64,
) -> Result<(Matrix3<f64>, Vec<usize>), ViewGraphError> {
    if matches.len() < 8 {
        return Err(ViewGraphError::DegenerateConfiguration {
            what: format!("{} matches, need 8", matches.len()),
        });
    }
    let a_pts: Vec<Vector2<f64>> = matches.iter().map(|m| m.point_a).collect();
    let b_pts: Vec<Vector2<f64>> = matches.iter().map(|m| m.point_b).collect();

    let opts = RansacOptions { threshold_px, max_iters, confidence: 0.999, seed };
    let solve = |sample: &[usize]| -> Vec<Matrix3<f64>> {
        let sa: Vec<Vector2<f64>> = sample.iter().map(|&i| a_pts[i]).collect();
        let sb: Vec<Vector2<f64>> = sample.iter().map(|&i| b_pts[i]).collect();
        eight_point(&sa, &sb).into_iter().collect()
    };
    let score = |f: &Matrix3<f64>, i: usize| sampson_distance_sq(f, &a_pts[i], &b_pts[i]);

    let (mut best_f, mut inliers) = ransac(matches.len(), 8, &opts, solve, score)
        .ok_or_else(|| ViewGraphError::DegenerateConfiguration {
            what: "all minimal samples degenerate".into(),
        })?;

    // Local refinement: least-squares refit on all inliers.
    if inliers.len() >= 8 {
        let ra: Vec<Vector2<f64>> = inliers.iter().map(|&i| a_pts[i]).collect();
        let rb: Vec<Vector2<f64>> = inliers.iter().map(|&i| b_pts[i]).collect();
        if let Some(refit) = eight_point(&ra, &rb) {
            let thresh_sq = threshold_px * threshold_px;
            let new_inliers: Vec<usize> = (0..matches.len())
                .filter(|&i| sampson_distance_sq(&refit, &a_pts[i], &b_pts[i]) < thresh_sq)
                .collect();
            if new_inliers.len() >= inliers.len() {
                best_f = refit;
                inliers = new_inliers;
            }
        }
    }

    Ok((best_f, inliers))
}
