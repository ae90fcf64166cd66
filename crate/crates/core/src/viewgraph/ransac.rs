use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy)]
pub struct RansacOptions {
    /// Inlier threshold on the Sampson distance, in pixels.
    pub threshold_px: f64,
    pub max_iters: usize,
    /// Early-exit confidence for the adaptive iteration bound.
    pub confidence: f64,
    pub seed: u64,
}

impl Default for RansacOptions {
    fn default() -> Self {
        RansacOptions { threshold_px: 1.0, max_iters: 1000, confidence: 0.999, seed: 0 }
    }
}

/// Generic RANSAC: samples minimal subsets, scores candidate models by a
/// squared residual, and keeps the model with the most inliers (ties by
/// lower total inlier error). Deterministic for a fixed seed.
pub fn ransac<M: Clone>(
    n: usize,
    sample_size: usize,
    opts: &RansacOptions,
    solve: impl Fn(&[usize]) -> Vec<M>,
    residual_sq: impl Fn(&M, usize) -> f64,
) -> Option<(M, Vec<usize>)> {
    if n < sample_size {
        return None;
    }
    let thresh_sq = opts.threshold_px * opts.threshold_px;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(M, Vec<usize>, f64)> = None;
    let mut required = opts.max_iters;
    let mut sample = vec![0usize; sample_size];

    let mut iter = 0;
    while iter < required.min(opts.max_iters) {
        iter += 1;
        // Distinct random sample.
        for k in 0..sample_size {
            loop {
                let cand = rng.random_range(0..n);
                if !sample[..k].contains(&cand) {
                    sample[k] = cand;
                    break;
                }
            }
        }
        for model in solve(&sample) {
            let mut inliers = Vec::new();
            let mut score = 0.0;
            for i in 0..n {
                let r = residual_sq(&model, i);
                if r < thresh_sq {
                    inliers.push(i);
                    score += r;
                }
            }
            let better = match &best {
                None => !inliers.is_empty(),
                Some((_, bi, bs)) => {
                    inliers.len() > bi.len() || (inliers.len() == bi.len() && score < *bs)
                }
            };
            if better {
                // Adaptive bound from the inlier ratio.
                let w = inliers.len() as f64 / n as f64;
                let denom = (1.0 - w.powi(sample_size as i32)).max(1e-12).ln();
                if denom < 0.0 {
                    let need = ((1.0 - opts.confidence).ln() / denom).ceil();
                    required = (need as usize).clamp(1, opts.max_iters);
                }
                best = Some((model, inliers, score));
            }
        }
    }
    best.map(|(m, i, _)| (m, i))
}
