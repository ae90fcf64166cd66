use super::ViewGraphError;
use crate::geom::{robust_loss, RobustKernel};
use nalgebra::{DMatrix, DVector, Matrix3, Vector2};

/// A fundamental matrix between two cameras, input to focal estimation.
#[derive(Debug, Clone)]
pub struct FundamentalEdge {
    pub image_a: usize,
    pub image_b: usize,
    pub fundamental: Matrix3<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FetzerOptions {
    /// Cauchy scale on the essentialness residual.
    pub cauchy_scale: f64,
    pub max_iters: usize,
    /// Relative objective decrease below which iteration stops.
    pub tol: f64,
}

impl Default for FetzerOptions {
    fn default() -> Self {
        FetzerOptions { cauchy_scale: 0.1, max_iters: 100, tol: 1e-12 }
    }
}

/// Essentialness residual of one edge for candidate focals: with
/// `E = K_b^T F K_a` scaled by its largest singular value, a true essential
/// matrix satisfies `|E|_F^2 = 2`, so the residual
/// `(s2/s1)^2 + (s3/s1)^2 - 1` vanishes exactly at the correct focals.
/// Each F is pre-scaled to unit Frobenius norm for conditioning.
pub fn fetzer_residual(
    f: &Matrix3<f64>,
    fa: f64,
    fb: f64,
    pp_a: &Vector2<f64>,
    pp_b: &Vector2<f64>,
) -> f64 {
    let ka = Matrix3::new(fa, 0.0, pp_a.x, 0.0, fa, pp_a.y, 0.0, 0.0, 1.0);
    let kb = Matrix3::new(fb, 0.0, pp_b.x, 0.0, fb, pp_b.y, 0.0, 0.0, 1.0);
    let e = kb.transpose() * (f / f.norm()) * ka;
    let sv = e.svd(false, false).singular_values;
    let s1 = sv[0].max(1e-300);
    (sv[1] / s1).powi(2) + (sv[2] / s1).powi(2) - 1.0
}

/// Objective value for a candidate focal assignment.
fn objective(
    edges: &[FundamentalEdge],
    focals: &[f64],
    pps: &[Vector2<f64>],
    kernel: &RobustKernel,
) -> f64 {
    edges
        .iter()
        .map(|e| {
            let r = fetzer_residual(
                &e.fundamental,
                focals[e.image_a],
                focals[e.image_b],
                &pps[e.image_a],
                &pps[e.image_b],
            );
            robust_loss(kernel, r * r).0
        })
        .sum()
}

/// Estimates focal lengths from pairwise fundamental matrices by robust
/// nonlinear least squares (principal points fixed, square pixels).
///
/// With `shared_intrinsics` a single focal is fit for all cameras.
/// Results are boxed to `[0.1, 10] * initial_focal`. Returns
/// [`ViewGraphError::NoConvergence`] if the iteration budget is exhausted
/// before the step or objective stalls; callers fall back to
/// `initial_focal`.
pub fn estimate_focal_fetzer(
    edges: &[FundamentalEdge],
    n_cameras: usize,
    initial_focal: f64,
    principal_points: &[Vector2<f64>],
    shared_intrinsics: bool,
    opts: &FetzerOptions,
) -> Result<Vec<f64>, ViewGraphError> {
    assert_eq!(principal_points.len(), n_cameras);
    assert!(!edges.is_empty(), "focal estimation needs at least one edge");
    let kernel = RobustKernel::cauchy(opts.cauchy_scale);
    let n_vars = if shared_intrinsics { 1 } else { n_cameras };
    // Optimize log-focals; the box constraint becomes a simple clamp.
    let mut u = vec![initial_focal.ln(); n_vars];
    let (u_min, u_max) = ((0.1 * initial_focal).ln(), (10.0 * initial_focal).ln());

    let focals_of = |u: &[f64]| -> Vec<f64> {
        (0..n_cameras)
            .map(|c| if shared_intrinsics { u[0].exp() } else { u[c].exp() })
            .collect()
    };

    let mut lambda = 1e-3;
    let mut obj = objective(edges, &focals_of(&u), principal_points, &kernel);
    for _ in 0..opts.max_iters {
        // Numeric Jacobian of the per-edge residuals w.r.t. log-focals.
        let focals = focals_of(&u);
        let h = 1e-5;
        let mut jt_j = DMatrix::<f64>::zeros(n_vars, n_vars);
        let mut jt_r = DVector::<f64>::zeros(n_vars);
        for e in edges {
            let r0 = fetzer_residual(
                &e.fundamental,
                focals[e.image_a],
                focals[e.image_b],
                &principal_points[e.image_a],
                &principal_points[e.image_b],
            );
            let (_, w) = robust_loss(&kernel, r0 * r0);
            let vars: Vec<usize> = if shared_intrinsics {
                vec![0]
            } else if e.image_a == e.image_b {
                vec![e.image_a]
            } else {
                vec![e.image_a, e.image_b]
            };
            let mut grad = vec![0.0; vars.len()];
            for (vi, &v) in vars.iter().enumerate() {
                let mut up = u.clone();
                up[v] += h;
                let mut um = u.clone();
                um[v] -= h;
                let fp = focals_of(&up);
                let fm = focals_of(&um);
                let rp = fetzer_residual(
                    &e.fundamental,
                    fp[e.image_a],
                    fp[e.image_b],
                    &principal_points[e.image_a],
                    &principal_points[e.image_b],
                );
                let rm = fetzer_residual(
                    &e.fundamental,
                    fm[e.image_a],
                    fm[e.image_b],
                    &principal_points[e.image_a],
                    &principal_points[e.image_b],
                );
                grad[vi] = (rp - rm) / (2.0 * h);
            }
            for (vi, &v) in vars.iter().enumerate() {
                jt_r[v] += w * grad[vi] * r0;
                for (wi, &v2) in vars.iter().enumerate() {
                    jt_j[(v, v2)] += w * grad[vi] * grad[wi];
                }
            }
        }

        let mut improved = false;
        for _ in 0..10 {
            let mut damped = jt_j.clone();
            for d in 0..n_vars {
                damped[(d, d)] += lambda * (jt_j[(d, d)].max(1e-12));
            }
            let Some(step) = damped.lu().solve(&(-&jt_r)) else {
                lambda *= 10.0;
                continue;
            };
            let mut u_new = u.clone();
            for (i, un) in u_new.iter_mut().enumerate() {
                *un = (*un + step[i]).clamp(u_min, u_max);
            }
            let new_obj = objective(edges, &focals_of(&u_new), principal_points, &kernel);
            if new_obj <= obj {
                let rel = (obj - new_obj) / obj.max(1e-300);
                let step_norm = step.norm();
                u = u_new;
                obj = new_obj;
                lambda = (lambda * 0.5).max(1e-12);
                improved = true;
                if rel < opts.tol || step_norm < 1e-12 {
                    return Ok(focals_of(&u));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            // Damping exhausted: accept the current iterate as converged.
            return Ok(focals_of(&u));
        }
    }
    Err(ViewGraphError::NoConvergence { iters: opts.max_iters })
}
