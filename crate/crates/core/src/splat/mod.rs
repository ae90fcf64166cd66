//! Differentiable CPU Gaussian-splat renderer.
//!
//! The forward model is the perspective EWA splat: each primitive's 3D
//! covariance `R S S^T R^T` is pushed through the projection Jacobian into a
//! 2D Gaussian, and pixels composite contributions front to back with
//! `alpha' = alpha * exp(-0.5 d^T conic d)`. The backward pass produces
//! analytic gradients for every primitive parameter and for a
//! left-multiplicative camera-pose twist.

mod backward;
mod render;
mod sh;

pub use backward::{render_with_gradients, GaussianGrads, RenderGrads};
pub use render::{render, RenderOptions, RenderedImage};
pub use sh::{sh_basis, sh_coeff_count, SH_C0};

use nalgebra::Vector3;
use thiserror::Error;

/// Struct-of-arrays Gaussian primitive set.
///
/// Scales are stored as log-scales, opacity as a logit, and color as
/// spherical-harmonic coefficients (`(degree + 1)^2` per channel), so all
/// parameters are unconstrained during optimization.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSet {
    pub positions: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    /// Quaternions `(w, x, y, z)`; normalized on use.
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    /// `len = count * sh_coeff_count(sh_degree)`, coefficient-major per
    /// Gaussian: `sh[g * n_coeffs + m][channel]`.
    pub sh: Vec<[f64; 3]>,
    pub sh_degree: usize,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SplatError {
    #[error("need at least {needed} points, got {got}")]
    TooFewPoints { needed: usize, got: usize },
}

impl GaussianSet {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn coeffs_per_gaussian(&self) -> usize {
        sh_coeff_count(self.sh_degree)
    }

    pub fn empty(sh_degree: usize) -> Self {
        GaussianSet {
            positions: Vec::new(),
            log_scales: Vec::new(),
            rotations: Vec::new(),
            opacity_logits: Vec::new(),
            sh: Vec::new(),
            sh_degree,
        }
    }

    pub fn opacity(&self, i: usize) -> f64 {
        sigmoid(self.opacity_logits[i])
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub(crate) fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Initial opacity assigned to every primitive.
pub const INIT_OPACITY: f64 = 0.1;

/// Number of nearest neighbors averaged for the initial isotropic scale.
pub const INIT_KNN: usize = 4;

/// Builds one isotropic Gaussian per input point: position at the point,
/// scale from the mean distance to the 4 nearest neighbors, identity
/// rotation, opacity 0.1, and a degree-0 SH color matching the point color.
pub fn init_gaussians_from_points(
    points: &[(Vector3<f64>, [f64; 3])],
    sh_degree: usize,
) -> Result<GaussianSet, SplatError> {
    if points.len() < INIT_KNN + 1 {
        return Err(SplatError::TooFewPoints { needed: INIT_KNN + 1, got: points.len() });
    }
    let positions: Vec<Vector3<f64>> = points.iter().map(|(p, _)| *p).collect();
    let knn = mean_knn_distances(&positions, INIT_KNN);

    let n_coeffs = sh_coeff_count(sh_degree);
    let mut sh = vec![[0.0; 3]; points.len() * n_coeffs];
    for (i, (_, color)) in points.iter().enumerate() {
        // Degree-0 coefficient such that the rendered color equals the point
        // color: color = c0 * Y00 + 0.5.
        for c in 0..3 {
            sh[i * n_coeffs][c] = (color[c] - 0.5) / SH_C0;
        }
    }

    Ok(GaussianSet {
        log_scales: knn.iter().map(|&d| Vector3::repeat(d.max(1e-12).ln())).collect(),
        rotations: vec![[1.0, 0.0, 0.0, 0.0]; points.len()],
        opacity_logits: vec![logit(INIT_OPACITY); points.len()],
        positions,
        sh,
        sh_degree,
    })
}

/// Mean distance to the `k` nearest neighbors of every point, using a
/// uniform-grid accelerator.
fn mean_knn_distances(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
    use std::collections::HashMap;

    let n = points.len();
    let mut lo = points[0];
    let mut hi = points[0];
    for p in points {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = (hi - lo).max().max(1e-12);
    // Aim for a handful of points per cell.
    let cells = ((n as f64 / 4.0).cbrt().ceil() as i64).clamp(1, 64);
    let cell = span / cells as f64;
    let index = |p: &Vector3<f64>| -> (i64, i64, i64) {
        (
            ((p.x - lo.x) / cell).floor() as i64,
            ((p.y - lo.y) / cell).floor() as i64,
            ((p.z - lo.z) / cell).floor() as i64,
        )
    };
    let mut grid: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        grid.entry(index(p)).or_default().push(i);
    }

    crate::parallel::ordered_map(points, |i, p| {
        let (cx, cy, cz) = index(p);
        let mut best: Vec<f64> = Vec::new(); // sorted squared distances, len <= k
        let mut ring = 0i64;
        loop {
            // Scan the cube shell at Chebyshev distance `ring`.
            for dx in -ring..=ring {
                for dy in -ring..=ring {
                    for dz in -ring..=ring {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != ring {
                            continue;
                        }
                        if let Some(ids) = grid.get(&(cx + dx, cy + dy, cz + dz)) {
                            for &j in ids {
                                if j == i {
                                    continue;
                                }
                                let d = (points[j] - p).norm_squared();
                                let pos = best.partition_point(|&b| b < d);
                                if pos < k {
                                    best.insert(pos, d);
                                    best.truncate(k);
                                }
                            }
                        }
                    }
                }
            }
            // Neighbors beyond the scanned shells are at least `ring * cell`
            // away; stop once the current k-th distance beats that bound.
            let safe = (ring as f64) * cell;
            if best.len() == k && best[k - 1].sqrt() <= safe {
                break;
            }
            ring += 1;
            if ring > 2 * cells + 2 {
                break; // degenerate cloud; whatever was found is complete
            }
        }
        best.iter().map(|d| d.sqrt()).sum::<f64>() / best.len().max(1) as f64
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_force_knn(points: &[Vector3<f64>], k: usize) -> Vec<f64> {
        points
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d: Vec<f64> = points
                    .iter()
                    .enumerate()
                    .filter(|(j, _)| *j != i)
                    .map(|(_, q)| (q - p).norm())
                    .collect();
                d.sort_by(|a, b| a.partial_cmp(b).unwrap());
                d.truncate(k);
                d.iter().sum::<f64>() / k as f64
            })
            .collect()
    }

    #[test]
    fn too_few_points_is_an_error() {
        let pts: Vec<_> = (0..4).map(|i| (Vector3::new(i as f64, 0.0, 0.0), [0.5; 3])).collect();
        assert_eq!(
            init_gaussians_from_points(&pts, 0),
            Err(SplatError::TooFewPoints { needed: 5, got: 4 })
        );
    }

    #[test]
    fn init_scales_match_brute_force_knn() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let pts: Vec<(Vector3<f64>, [f64; 3])> = (0..300)
            .map(|_| {
                (
                    Vector3::new(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                    [rng.random_range(0.0..1.0); 3],
                )
            })
            .collect();
        let set = init_gaussians_from_points(&pts, 0).unwrap();
        let positions: Vec<Vector3<f64>> = pts.iter().map(|(p, _)| *p).collect();
        let oracle = brute_force_knn(&positions, INIT_KNN);
        for i in 0..pts.len() {
            let got = set.log_scales[i].x.exp();
            assert!(
                (got - oracle[i]).abs() < 1e-12 * oracle[i].max(1.0),
                "point {i}: {got} vs {}",
                oracle[i]
            );
            assert_eq!(set.log_scales[i].x, set.log_scales[i].y);
        }
    }

    #[test]
    fn init_opacity_and_color() {
        let pts: Vec<(Vector3<f64>, [f64; 3])> = (0..6)
            .map(|i| (Vector3::new(i as f64 * 0.3, 0.1, 0.2), [0.8, 0.4, 0.2]))
            .collect();
        let set = init_gaussians_from_points(&pts, 0).unwrap();
        for i in 0..set.len() {
            assert!((set.opacity(i) - INIT_OPACITY).abs() < 1e-12);
            let color = set.sh[i][0] * SH_C0 + 0.5;
            assert!((color - 0.8).abs() < 1e-12);
            assert_eq!(set.rotations[i], [1.0, 0.0, 0.0, 0.0]);
        }
    }

    #[test]
    fn knn_on_fixed_five_points() {
        // Positions whose pairwise distances are easy to enumerate.
        let pts = [
            Vector3::new(0.0, 0.0, 0.0),
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 1.0, 0.0),
            Vector3::new(0.0, 0.0, 1.0),
            Vector3::new(1.0, 1.0, 1.0),
        ];
        let got = mean_knn_distances(&pts, 4);
        let oracle = brute_force_knn(&pts, 4);
        for (g, o) in got.iter().zip(&oracle) {
            assert!((g - o).abs() < 1e-12);
        }
    }
}
