use super::ImageBuffer;

/// Reported PSNR ceiling for (near-)identical images, in dB.
pub const PSNR_CAP: f64 = 99.0;

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

pub fn mse(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    assert_eq!(a.data().len(), b.data().len(), "image sizes differ");
    let n = a.data().len() as f64;
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum::<f64>()
        / n
}

/// Peak signal-to-noise ratio on `[0, 1]` images, capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let m = mse(a, b);
    if m <= 0.0 {
        return PSNR_CAP;
    }
    (10.0 * (1.0 / m).log10()).min(PSNR_CAP)
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let mut k = [0.0; SSIM_WINDOW];
    let c = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - c;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *v;
    }
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Separable valid-mode convolution of a `(w, h)` plane; output is
/// `(w - 10, h - 10)`.
fn conv_valid(plane: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wv = w - SSIM_WINDOW + 1;
    let hv = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; wv * h];
    for y in 0..h {
        for x in 0..wv {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * plane[y * w + x + j];
            }
            rows[y * wv + x] = acc;
        }
    }
    let mut out = vec![0.0; wv * hv];
    for y in 0..hv {
        for x in 0..wv {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * rows[(y + j) * wv + x];
            }
            out[y * wv + x] = acc;
        }
    }
    out
}

/// Adjoint of [`conv_valid`]: scatters a valid-region field back to the full
/// `(w, h)` plane.
fn scatter_full(field: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let wv = w - SSIM_WINDOW + 1;
    let hv = h - SSIM_WINDOW + 1;
    let mut rows = vec![0.0; w * hv];
    for y in 0..hv {
        for x in 0..wv {
            let g = field[y * wv + x];
            for (j, kj) in k.iter().enumerate() {
                rows[y * w + x + j] += kj * g;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..hv {
        for x in 0..w {
            let g = rows[y * w + x];
            for (j, kj) in k.iter().enumerate() {
                out[(y + j) * w + x] += kj * g;
            }
        }
    }
    out
}

struct ChannelStats {
    mu_x: Vec<f64>,
    mu_y: Vec<f64>,
    var_x: Vec<f64>,
    var_y: Vec<f64>,
    cov: Vec<f64>,
}

fn channel_stats(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64; SSIM_WINDOW]) -> ChannelStats {
    let mu_x = conv_valid(x, w, h, k);
    let mu_y = conv_valid(y, w, h, k);
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mut var_x = conv_valid(&xx, w, h, k);
    let mut var_y = conv_valid(&yy, w, h, k);
    let mut cov = conv_valid(&xy, w, h, k);
    for i in 0..mu_x.len() {
        var_x[i] -= mu_x[i] * mu_x[i];
        var_y[i] -= mu_y[i] * mu_y[i];
        cov[i] -= mu_x[i] * mu_y[i];
    }
    ChannelStats { mu_x, mu_y, var_x, var_y, cov }
}

/// Mean structural similarity over valid 11x11 windows, averaged across
/// channels. Requires images of at least 11x11.
pub fn ssim(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    ssim_impl(a, b, false).0
}

/// SSIM together with the gradient of the mean SSIM with respect to the
/// first image's channel values.
pub fn ssim_with_gradient(a: &ImageBuffer, b: &ImageBuffer) -> (f64, Vec<f64>) {
    let (v, g) = ssim_impl(a, b, true);
    (v, g.expect("gradient requested"))
}

fn ssim_impl(a: &ImageBuffer, b: &ImageBuffer, with_grad: bool) -> (f64, Option<Vec<f64>>) {
    let (w, h) = (a.width(), a.height());
    assert_eq!((b.width(), b.height()), (w, h), "image sizes differ");
    assert!(
        w >= SSIM_WINDOW && h >= SSIM_WINDOW,
        "ssim needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}"
    );
    let k = gaussian_kernel();
    let wv = w - SSIM_WINDOW + 1;
    let hv = h - SSIM_WINDOW + 1;
    let n_valid = wv * hv;

    let mut total = 0.0;
    let mut grad = if with_grad { Some(vec![0.0; w * h * 3]) } else { None };
    let norm = 1.0 / (n_valid as f64 * 3.0);

    for c in 0..3 {
        let x = a.channel_plane(c);
        let y = b.channel_plane(c);
        let st = channel_stats(&x, &y, w, h, &k);

        let mut g1 = vec![0.0; n_valid];
        let mut g3 = vec![0.0; n_valid];
        // Combined variance+covariance factor 2*G2 + G3, written so it is
        // exactly zero when both images are bitwise identical (A2 == B2);
        // likewise G1 via the (my*B1 - mx*A1) factor. This keeps the whole
        // gradient exactly zero at the global optimum, which optimizers
        // with normalized steps rely on.
        let mut s23 = vec![0.0; n_valid];
        for p in 0..n_valid {
            let (mx, my) = (st.mu_x[p], st.mu_y[p]);
            let a1 = 2.0 * mx * my + SSIM_C1;
            let a2 = 2.0 * st.cov[p] + SSIM_C2;
            let b1 = mx * mx + my * my + SSIM_C1;
            let b2 = st.var_x[p] + st.var_y[p] + SSIM_C2;
            total += a1 * a2 / (b1 * b2);
            if with_grad {
                g1[p] = 2.0 * a2 * (my * b1 - mx * a1) / (b1 * b1 * b2);
                g3[p] = 2.0 * a1 / (b1 * b2);
                s23[p] = 2.0 * a1 * (b2 - a2) / (b1 * b2 * b2);
            }
        }

        if let Some(grad) = grad.as_mut() {
            // Per-pixel gradient: sum over windows of
            //   G1 + S23 (x - mu_x) + G3 ((y - x) - (mu_y - mu_x)),
            // with the window-mean products folded into extra scatters.
            let s23m: Vec<f64> = s23.iter().zip(&st.mu_x).map(|(g, m)| g * m).collect();
            let g3dm: Vec<f64> = g3
                .iter()
                .zip(st.mu_y.iter().zip(&st.mu_x))
                .map(|(g, (my, mx))| g * (my - mx))
                .collect();
            let t1 = scatter_full(&g1, w, h, &k);
            let t23 = scatter_full(&s23, w, h, &k);
            let t23m = scatter_full(&s23m, w, h, &k);
            let t3 = scatter_full(&g3, w, h, &k);
            let t3dm = scatter_full(&g3dm, w, h, &k);
            for q in 0..w * h {
                let d = t1[q] + x[q] * t23[q] - t23m[q] + (y[q] - x[q]) * t3[q] - t3dm[q];
                grad[q * 3 + c] = d * norm;
            }
        }
    }

    (total * norm, grad)
}

/// Blended photometric loss: `(1 - lambda) * L1 + lambda * (1 - SSIM)`.
///
/// Returns the loss and its gradient with respect to `rendered`.
pub fn photometric_loss(
    rendered: &ImageBuffer,
    target: &ImageBuffer,
    lambda_ssim: f64,
) -> (f64, Vec<f64>) {
    let n = rendered.data().len() as f64;
    let mut l1 = 0.0;
    let mut grad: Vec<f64> = rendered
        .data()
        .iter()
        .zip(target.data())
        .map(|(r, t)| {
            let d = r - t;
            l1 += d.abs();
            let sign = if d == 0.0 { 0.0 } else { d.signum() };
            (1.0 - lambda_ssim) * sign / n
        })
        .collect();
    l1 /= n;
    if lambda_ssim == 0.0 {
        return (l1, grad);
    }
    let (s, s_grad) = ssim_with_gradient(rendered, target);
    for (g, sg) in grad.iter_mut().zip(&s_grad) {
        *g -= lambda_ssim * sg;
    }
    ((1.0 - lambda_ssim) * l1 + lambda_ssim * (1.0 - s), grad)
}
