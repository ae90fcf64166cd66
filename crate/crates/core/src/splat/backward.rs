use super::render::{prepare, projection_jacobian, quaternion_matrix, render_prepared, Prepared, RenderOptions, RenderedImage, ScreenGaussian};
use super::sh::sh_basis;
use super::GaussianSet;
use crate::geom::{CameraIntrinsics, Pose, Twist};
use crate::img::{photometric_loss, ImageBuffer};
use crate::parallel;
use nalgebra::{Matrix2, Matrix3, Vector2, Vector3, Vector4};

/// Gradients mirroring the [`GaussianSet`] layout.
#[derive(Debug, Clone)]
pub struct GaussianGrads {
    pub positions: Vec<Vector3<f64>>,
    pub log_scales: Vec<Vector3<f64>>,
    pub rotations: Vec<[f64; 4]>,
    pub opacity_logits: Vec<f64>,
    pub sh: Vec<[f64; 3]>,
}

impl GaussianGrads {
    pub fn zeros_like(set: &GaussianSet) -> Self {
        GaussianGrads {
            positions: vec![Vector3::zeros(); set.len()],
            log_scales: vec![Vector3::zeros(); set.len()],
            rotations: vec![[0.0; 4]; set.len()],
            opacity_logits: vec![0.0; set.len()],
            sh: vec![[0.0; 3]; set.sh.len()],
        }
    }

    pub fn scale(&mut self, f: f64) {
        for v in &mut self.positions {
            *v *= f;
        }
        for v in &mut self.log_scales {
            *v *= f;
        }
        for q in &mut self.rotations {
            for c in q.iter_mut() {
                *c *= f;
            }
        }
        for v in &mut self.opacity_logits {
            *v *= f;
        }
        for s in &mut self.sh {
            for c in s.iter_mut() {
                *c *= f;
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct RenderGrads {
    pub gaussians: GaussianGrads,
    /// Gradient with respect to a left-multiplicative twist applied to the
    /// camera pose (`[rotation; translation]` ordering).
    pub pose_twist: Twist,
}

/// Per-splat screen-space adjoints accumulated over pixels.
#[derive(Debug, Clone, Copy)]
struct ScreenGrad {
    color: [f64; 3],
    mean: Vector2<f64>,
    conic: Matrix2<f64>,
    alpha: f64,
}

impl Default for ScreenGrad {
    fn default() -> Self {
        ScreenGrad {
            color: [0.0; 3],
            mean: Vector2::zeros(),
            conic: Matrix2::zeros(),
            alpha: 0.0,
        }
    }
}

impl ScreenGrad {
    fn add(&mut self, o: &ScreenGrad) {
        for c in 0..3 {
            self.color[c] += o.color[c];
        }
        self.mean += o.mean;
        self.conic += o.conic;
        self.alpha += o.alpha;
    }
}

/// Renders, evaluates the photometric loss against `target`, and returns
/// analytic gradients for every Gaussian parameter and the pose twist.
pub fn render_with_gradients(
    gaussians: &GaussianSet,
    k: &CameraIntrinsics,
    pose: &Pose,
    target: &ImageBuffer,
    lambda_ssim: f64,
    opts: &RenderOptions,
) -> (f64, RenderedImage, RenderGrads) {
    let prep = prepare(gaussians, k, pose, opts);
    let rendered = render_prepared(&prep, k, opts);
    let (loss, dimg) = photometric_loss(&rendered.image, target, lambda_ssim);
    let grads = backward(gaussians, k, pose, &prep, &rendered, &dimg, opts);
    (loss, rendered, grads)
}

fn backward(
    gaussians: &GaussianSet,
    k: &CameraIntrinsics,
    pose: &Pose,
    prep: &Prepared,
    rendered: &RenderedImage,
    dimg: &[f64],
    opts: &RenderOptions,
) -> RenderGrads {
    let n_splats = prep.splats.len();
    let width = k.width;

    // Pass 1: per-pixel walks accumulate screen-space adjoints, in fixed
    // row chunks merged in order (bit-reproducible for any thread count).
    let row_ids: Vec<usize> = (0..k.height).collect();
    let screen: Vec<ScreenGrad> = parallel::chunked_fold(
        &row_ids,
        8,
        || vec![ScreenGrad::default(); n_splats],
        |acc, _, &y| {
            backward_row(prep, rendered, dimg, opts, width, y, acc);
        },
        |acc, part| {
            for (a, p) in acc.iter_mut().zip(&part) {
                a.add(p);
            }
        },
    );

    // Pass 2: chain screen-space adjoints to the parameters.
    let per_splat: Vec<(usize, SplatParamGrads)> = parallel::ordered_map(
        &prep.splats,
        |si, s| (s.index, chain_to_params(gaussians, k, pose, s, &screen[si])),
    );

    let mut out = GaussianGrads::zeros_like(gaussians);
    let mut pose_twist = Twist::zeros();
    let n_coeffs = gaussians.coeffs_per_gaussian();
    for (g, p) in per_splat {
        out.positions[g] += p.position;
        out.log_scales[g] += p.log_scale;
        for c in 0..4 {
            out.rotations[g][c] += p.rotation[c];
        }
        out.opacity_logits[g] += p.opacity_logit;
        for (m, sh) in p.sh.iter().enumerate() {
            for c in 0..3 {
                out.sh[g * n_coeffs + m][c] += sh[c];
            }
        }
        pose_twist += p.pose_twist;
    }

    RenderGrads { gaussians: out, pose_twist }
}

fn backward_row(
    prep: &Prepared,
    rendered: &RenderedImage,
    dimg: &[f64],
    opts: &RenderOptions,
    width: usize,
    y: usize,
    acc: &mut [ScreenGrad],
) {
    let splats = &prep.splats;
    let row = &prep.rows[y];
    let py = y as f64 + 0.5;
    for x in 0..width {
        let px = x as f64 + 0.5;
        let pix = (y * width + x) * 3;
        let v = [dimg[pix], dimg[pix + 1], dimg[pix + 2]];
        if v == [0.0, 0.0, 0.0] {
            continue;
        }
        let c_total = [
            rendered.image.data()[pix],
            rendered.image.data()[pix + 1],
            rendered.image.data()[pix + 2],
        ];
        let mut prefix = [0.0f64; 3];
        let mut t = 1.0f64;
        for &si in row {
            let s = &splats[si as usize];
            if x < s.x_range.0 || x > s.x_range.1 {
                continue;
            }
            let d = Vector2::new(px - s.mean.x, py - s.mean.y);
            let q = s.conic[(0, 0)] * d.x * d.x
                + 2.0 * s.conic[(0, 1)] * d.x * d.y
                + s.conic[(1, 1)] * d.y * d.y;
            if q > s.q_max || q < 0.0 {
                continue;
            }
            let g_val = (-0.5 * q).exp();
            let a_raw = s.alpha * g_val;
            let clamped = a_raw > opts.max_alpha;
            let a = if clamped { opts.max_alpha } else { a_raw };
            let w = a * t;

            let sg = &mut acc[si as usize];
            let mut da = 0.0;
            for c in 0..3 {
                prefix[c] += s.color[c] * w;
                // Contributions behind this splat (exact: same fp prefix as
                // the forward pass).
                let rear = c_total[c] - prefix[c];
                sg.color[c] += v[c] * w;
                da += v[c] * (s.color[c] * t - rear / (1.0 - a));
            }
            if !clamped {
                // a = alpha * exp(-q/2)
                sg.alpha += da * g_val;
                let dq = da * s.alpha * g_val * (-0.5);
                // dL/dd = 2 dq Q d, and mean enters as d = pixel - mean.
                let qd = s.conic * d;
                sg.mean -= (qd + qd) * dq;
                sg.conic += d * d.transpose() * dq;
            }
            t *= 1.0 - a;
            if t < opts.transmittance_stop {
                break;
            }
        }
    }
}

struct SplatParamGrads {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: [f64; 4],
    opacity_logit: f64,
    sh: Vec<[f64; 3]>,
    pose_twist: Twist,
}

fn chain_to_params(
    gaussians: &GaussianSet,
    k: &CameraIntrinsics,
    pose: &Pose,
    s: &ScreenGaussian,
    sg: &ScreenGrad,
) -> SplatParamGrads {
    let g = s.index;
    let n_coeffs = gaussians.coeffs_per_gaussian();
    let r_cw = *pose.rotation.matrix();

    let mut d_position = Vector3::zeros();
    let mut d_omega = Vector3::zeros();
    let mut d_v = Vector3::zeros();

    // Color -> SH coefficients and view direction.
    let mut basis_grad = Vec::new();
    let basis = sh_basis(gaussians.sh_degree, &s.viewdir, Some(&mut basis_grad));
    let mut d_sh = vec![[0.0; 3]; n_coeffs];
    let mut d_dir = Vector3::zeros();
    for c in 0..3 {
        if !s.color_active[c] || sg.color[c] == 0.0 {
            continue;
        }
        let dc = sg.color[c];
        for m in 0..n_coeffs {
            d_sh[m][c] = basis[m] * dc;
            d_dir += basis_grad[m] * gaussians.sh[g * n_coeffs + m][c] * dc;
        }
    }
    if gaussians.sh_degree > 0 && d_dir != Vector3::zeros() {
        // viewdir = u / |u| with u = position - camera_center.
        let u = gaussians.positions[g] - pose.center();
        let n = u.norm();
        let du = (d_dir - s.viewdir * s.viewdir.dot(&d_dir)) / n;
        d_position += du;
        // camera center: dc/dv = -R^T, dc/domega = 0.
        d_v += r_cw * du;
    }

    // Opacity.
    let alpha0 = s.alpha;
    let d_opacity_logit = sg.alpha * alpha0 * (1.0 - alpha0);

    // Conic -> 2D covariance: d(Sigma) = -Q dQ Q for Q = Sigma^{-1}.
    let q_mat = s.conic;
    let d_cov2d = -(q_mat * sg.conic * q_mat);

    // Sigma2D = J V J^T (+ lowpass I): V is the camera-frame 3D covariance.
    let j = projection_jacobian(k, &s.p_cam);
    let rq = quaternion_matrix(&gaussians.rotations[g]);
    let s2 = Matrix3::from_diagonal(&gaussians.log_scales[g].map(|l| (2.0 * l).exp()));
    let m_world = rq * s2 * rq.transpose();
    let v_cam = r_cw * m_world * r_cw.transpose();

    let d_j = (d_cov2d + d_cov2d.transpose()) * j * v_cam;
    let d_vcam = j.transpose() * d_cov2d * j;

    // V = R M R^T.
    let d_m = r_cw.transpose() * d_vcam * r_cw;
    let d_rcw_cov = (d_vcam + d_vcam.transpose()) * r_cw * m_world;

    // M = Rq S^2 Rq^T.
    let d_rq = (d_m + d_m.transpose()) * rq * s2;
    let d_s2 = rq.transpose() * d_m * rq;
    let mut d_log_scale = Vector3::zeros();
    for i in 0..3 {
        d_log_scale[i] = d_s2[(i, i)] * 2.0 * (2.0 * gaussians.log_scales[g][i]).exp();
    }
    let d_rotation = quaternion_backward(&gaussians.rotations[g], &d_rq);

    // Projected mean -> camera point.
    let mut d_pcam = j.transpose() * sg.mean;

    // J itself depends on the camera point.
    let (fx, fy) = (k.fx, k.fy);
    let (px, py, pz) = (s.p_cam.x, s.p_cam.y, s.p_cam.z);
    let iz2 = 1.0 / (pz * pz);
    let iz3 = iz2 / pz;
    d_pcam.x += d_j[(0, 2)] * (-fx * iz2);
    d_pcam.y += d_j[(1, 2)] * (-fy * iz2);
    d_pcam.z += d_j[(0, 0)] * (-fx * iz2)
        + d_j[(1, 1)] * (-fy * iz2)
        + d_j[(0, 2)] * (2.0 * fx * px * iz3)
        + d_j[(1, 2)] * (2.0 * fy * py * iz3);

    // p = R x + t; left twist: dp/domega = -[p]x, dp/dv = I.
    d_position += r_cw.transpose() * d_pcam;
    d_omega += s.p_cam.cross(&d_pcam);
    d_v += d_pcam;

    // R appearing in the covariance path: R' = exp(omega) R.
    for col in 0..3 {
        let rc = r_cw.column(col).into_owned();
        let drc = d_rcw_cov.column(col).into_owned();
        d_omega += rc.cross(&drc);
    }

    let mut pose_twist = Twist::zeros();
    pose_twist.fixed_rows_mut::<3>(0).copy_from(&d_omega);
    pose_twist.fixed_rows_mut::<3>(3).copy_from(&d_v);

    SplatParamGrads {
        position: d_position,
        log_scale: d_log_scale,
        rotation: d_rotation,
        opacity_logit: d_opacity_logit,
        sh: d_sh,
        pose_twist,
    }
}

/// Pulls a gradient on the rotation matrix back to the (unnormalized)
/// quaternion parameters.
fn quaternion_backward(q: &[f64; 4], d_r: &Matrix3<f64>) -> [f64; 4] {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);

    let dw = 2.0
        * Matrix3::new(0.0, -z, y, z, 0.0, -x, -y, x, 0.0)
            .zip_fold(d_r, 0.0, |acc, a, b| acc + a * b);
    let dx = 2.0
        * Matrix3::new(0.0, y, z, y, -2.0 * x, -w, z, w, -2.0 * x)
            .zip_fold(d_r, 0.0, |acc, a, b| acc + a * b);
    let dy = 2.0
        * Matrix3::new(-2.0 * y, x, w, x, 0.0, z, -w, z, -2.0 * y)
            .zip_fold(d_r, 0.0, |acc, a, b| acc + a * b);
    let dz = 2.0
        * Matrix3::new(-2.0 * z, -w, x, w, -2.0 * z, y, x, y, 0.0)
            .zip_fold(d_r, 0.0, |acc, a, b| acc + a * b);

    // Chain through normalization: q_hat = q / |q|.
    let qh = Vector4::new(w, x, y, z);
    let dqh = Vector4::new(dw, dx, dy, dz);
    let dq = (dqh - qh * qh.dot(&dqh)) / n;
    [dq[0], dq[1], dq[2], dq[3]]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{se3_compose, Rotation};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub(crate) fn random_set(rng: &mut impl Rng, n: usize, sh_degree: usize) -> GaussianSet {
        let n_coeffs = super::super::sh::sh_coeff_count(sh_degree);
        let mut set = GaussianSet::empty(sh_degree);
        for _ in 0..n {
            set.positions.push(Vector3::new(
                rng.random_range(-0.8..0.8),
                rng.random_range(-0.8..0.8),
                rng.random_range(2.0..4.0),
            ));
            set.log_scales.push(Vector3::new(
                rng.random_range(-2.2..-1.2),
                rng.random_range(-2.2..-1.2),
                rng.random_range(-2.2..-1.2),
            ));
            let q = [
                rng.random_range(0.5..1.0),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
            ];
            set.rotations.push(q);
            set.opacity_logits.push(rng.random_range(-1.5..1.5));
            for m in 0..n_coeffs {
                let scale = if m == 0 { 1.0 } else { 0.1 };
                set.sh.push([
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                    rng.random_range(-scale..scale),
                ]);
            }
        }
        set
    }

    fn loss_only(
        set: &GaussianSet,
        k: &CameraIntrinsics,
        pose: &Pose,
        target: &ImageBuffer,
    ) -> f64 {
        let opts = RenderOptions::exact();
        let out = super::super::render(set, k, pose, &opts);
        photometric_loss(&out.image, target, 0.2).0
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let k = CameraIntrinsics::centered(32.0, 32, 32);
        let pose = Pose::new(Rotation::identity(), Vector3::zeros());
        let set = random_set(&mut rng, 6, 0);
        // Target: same primitives, slightly shifted, so residuals are
        // nonzero and far from L1 kinks.
        let mut target_set = set.clone();
        for p in &mut target_set.positions {
            p.x += 0.07;
            p.y -= 0.05;
        }
        let target = super::super::render(&target_set, &k, &pose, &RenderOptions::exact()).image;

        let opts = RenderOptions::exact();
        let (_, _, grads) = render_with_gradients(&set, &k, &pose, &target, 0.2, &opts);

        let h = 1e-5;
        let check = |name: &str, got: f64, mut plus: GaussianSet, mut minus: GaussianSet, f: &mut dyn FnMut(&mut GaussianSet, f64)| {
            f(&mut plus, h);
            f(&mut minus, -h);
            let fd = (loss_only(&plus, &k, &pose, &target) - loss_only(&minus, &k, &pose, &target))
                / (2.0 * h);
            let denom = fd.abs().max(got.abs()).max(1e-5);
            assert!(
                (fd - got).abs() / denom < 2e-3,
                "{name}: analytic {got} vs fd {fd}"
            );
        };

        for gi in 0..set.len() {
            for axis in 0..3 {
                check(
                    &format!("position[{gi}][{axis}]"),
                    grads.gaussians.positions[gi][axis],
                    set.clone(),
                    set.clone(),
                    &mut |s, d| s.positions[gi][axis] += d,
                );
                check(
                    &format!("log_scale[{gi}][{axis}]"),
                    grads.gaussians.log_scales[gi][axis],
                    set.clone(),
                    set.clone(),
                    &mut |s, d| s.log_scales[gi][axis] += d,
                );
            }
            for c in 0..4 {
                check(
                    &format!("rotation[{gi}][{c}]"),
                    grads.gaussians.rotations[gi][c],
                    set.clone(),
                    set.clone(),
                    &mut |s, d| s.rotations[gi][c] += d,
                );
            }
            check(
                &format!("opacity[{gi}]"),
                grads.gaussians.opacity_logits[gi],
                set.clone(),
                set.clone(),
                &mut |s, d| s.opacity_logits[gi] += d,
            );
            for c in 0..3 {
                check(
                    &format!("sh[{gi}][{c}]"),
                    grads.gaussians.sh[gi][c],
                    set.clone(),
                    set.clone(),
                    &mut |s, d| s.sh[gi][c] += d,
                );
            }
        }
    }

    #[test]
    fn pose_twist_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(78);
        let k = CameraIntrinsics::centered(32.0, 32, 32);
        let pose = Pose::new(
            Rotation::from_axis_angle(&Vector3::new(0.2, 1.0, 0.1), 0.05),
            Vector3::new(0.02, -0.03, 0.05),
        );
        let set = random_set(&mut rng, 6, 0);
        let mut target_set = set.clone();
        for p in &mut target_set.positions {
            p.x += 0.06;
        }
        let target = super::super::render(&target_set, &k, &pose, &RenderOptions::exact()).image;
        let opts = RenderOptions::exact();
        let (_, _, grads) = render_with_gradients(&set, &k, &pose, &target, 0.2, &opts);

        let h = 1e-6;
        for c in 0..6 {
            let mut dplus = Twist::zeros();
            dplus[c] = h;
            let mut dminus = Twist::zeros();
            dminus[c] = -h;
            let fd = (loss_only(&set, &k, &se3_compose(&pose, &dplus), &target)
                - loss_only(&set, &k, &se3_compose(&pose, &dminus), &target))
                / (2.0 * h);
            let got = grads.pose_twist[c];
            let denom = fd.abs().max(got.abs()).max(1e-5);
            assert!((fd - got).abs() / denom < 2e-3, "twist[{c}]: {got} vs fd {fd}");
        }
    }

    #[test]
    fn gradient_at_target_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(79);
        let k = CameraIntrinsics::centered(32.0, 32, 32);
        let pose = Pose::new(Rotation::identity(), Vector3::zeros());
        let set = random_set(&mut rng, 5, 0);
        let target = super::super::render(&set, &k, &pose, &RenderOptions::exact()).image;
        let (loss, _, grads) =
            render_with_gradients(&set, &k, &pose, &target, 0.2, &RenderOptions::exact());
        assert!(loss.abs() < 1e-12);
        for gi in 0..set.len() {
            assert!(grads.gaussians.positions[gi].norm() < 1e-8);
            assert!(grads.gaussians.opacity_logits[gi].abs() < 1e-8);
        }
        assert!(grads.pose_twist.norm() < 1e-8);
    }

    #[test]
    fn sh_degree3_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let k = CameraIntrinsics::centered(32.0, 32, 32);
        let pose = Pose::new(Rotation::identity(), Vector3::new(0.1, 0.0, 0.0));
        let set = random_set(&mut rng, 3, 3);
        let mut target_set = set.clone();
        for p in &mut target_set.positions {
            p.y += 0.06;
        }
        let target = super::super::render(&target_set, &k, &pose, &RenderOptions::exact()).image;
        let opts = RenderOptions::exact();
        let (_, _, grads) = render_with_gradients(&set, &k, &pose, &target, 0.2, &opts);
        let n_coeffs = set.coeffs_per_gaussian();

        let h = 1e-5;
        // Spot-check higher-order SH coefficients and positions (positions
        // now include the view-direction path).
        for gi in 0..set.len() {
            for m in [1usize, 4, 9, 15] {
                let idx = gi * n_coeffs + m;
                let mut plus = set.clone();
                plus.sh[idx][1] += h;
                let mut minus = set.clone();
                minus.sh[idx][1] -= h;
                let fd = (loss_only(&plus, &k, &pose, &target)
                    - loss_only(&minus, &k, &pose, &target))
                    / (2.0 * h);
                let got = grads.gaussians.sh[idx][1];
                let denom = fd.abs().max(got.abs()).max(1e-5);
                assert!((fd - got).abs() / denom < 2e-3, "sh[{gi}][{m}]: {got} vs {fd}");
            }
            for axis in 0..3 {
                let mut plus = set.clone();
                plus.positions[gi][axis] += h;
                let mut minus = set.clone();
                minus.positions[gi][axis] -= h;
                let fd = (loss_only(&plus, &k, &pose, &target)
                    - loss_only(&minus, &k, &pose, &target))
                    / (2.0 * h);
                let got = grads.gaussians.positions[gi][axis];
                let denom = fd.abs().max(got.abs()).max(1e-5);
                assert!(
                    (fd - got).abs() / denom < 2e-3,
                    "position[{gi}][{axis}]: {got} vs {fd}"
                );
            }
        }
    }
}
