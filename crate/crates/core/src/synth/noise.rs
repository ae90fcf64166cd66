use super::rng::{stream, StreamKind};
use super::scene::Scene;
use super::NoiseSpec;
use crate::viewgraph::Match;
use nalgebra::Vector2;
use rand::Rng;
use rand_distr::StandardNormal;

/// A noisy detection in one image. `source_point` is the originating scene
/// point, or `None` for spurious (outlier) detections.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoisyKeypoint {
    pub pixel: Vector2<f64>,
    pub source_point: Option<usize>,
}

/// Matches for one image pair plus per-match outlier labels (test oracle).
#[derive(Debug, Clone)]
pub struct PairMatches {
    pub image_a: usize,
    pub image_b: usize,
    pub matches: Vec<Match>,
    pub is_outlier: Vec<bool>,
}

#[derive(Debug, Clone)]
pub struct NoisyObservations {
    /// Per-image keypoint tables; indices are the keypoint ids in `pairs`.
    pub keypoints: Vec<Vec<NoisyKeypoint>>,
    pub pairs: Vec<PairMatches>,
}

impl NoisyObservations {
    pub fn all_matches(&self) -> Vec<Match> {
        self.pairs.iter().flat_map(|p| p.matches.iter().copied()).collect()
    }

    pub fn total_matches(&self) -> usize {
        self.pairs.iter().map(|p| p.matches.len()).sum()
    }

    pub fn total_outliers(&self) -> usize {
        self.pairs
            .iter()
            .map(|p| p.is_outlier.iter().filter(|&&o| o).count())
            .sum()
    }
}

/// Derives noisy pairwise matches from a scene's ground-truth tracks.
///
/// Each ground-truth observation receives one noisy detection shared by all
/// pairs that reference it, so track consistency survives corruption. Per
/// pair, `round(outlier_fraction * n)` correspondences are replaced by a
/// match to a fresh uniformly random detection in the second image.
pub fn corrupt_observations(scene: &Scene, spec: &NoiseSpec) -> NoisyObservations {
    spec.validate();
    let n_cams = scene.cameras.len();

    // Noisy detection tables, one entry per ground-truth observation. The
    // noise stream is keyed by (camera, keypoint), so detections are stable
    // under changes elsewhere in the scene.
    let mut keypoints: Vec<Vec<NoisyKeypoint>> = vec![Vec::new(); n_cams];
    for track in &scene.tracks {
        for obs in &track.observations {
            debug_assert_eq!(keypoints[obs.camera].len(), obs.keypoint);
            let mut rng = stream(
                spec.seed,
                StreamKind::PixelNoise,
                (obs.camera as u64) << 32 | obs.keypoint as u64,
            );
            let k = &scene.cameras[obs.camera].intrinsics;
            let dx: f64 = rng.sample(StandardNormal);
            let dy: f64 = rng.sample(StandardNormal);
            let px = Vector2::new(
                (obs.pixel.x + spec.pixel_sigma * dx).clamp(0.0, k.width as f64 - 1e-6),
                (obs.pixel.y + spec.pixel_sigma * dy).clamp(0.0, k.height as f64 - 1e-6),
            );
            keypoints[obs.camera].push(NoisyKeypoint { pixel: px, source_point: Some(track.point) });
        }
    }

    // Co-visibility lists: (point, keypoint in a, keypoint in b) per pair.
    let mut covis: Vec<Vec<(usize, usize, usize)>> = vec![Vec::new(); n_cams * n_cams];
    for track in &scene.tracks {
        let obs = &track.observations;
        for i in 0..obs.len() {
            for j in i + 1..obs.len() {
                let (a, b) = (&obs[i], &obs[j]);
                covis[a.camera * n_cams + b.camera].push((track.point, a.keypoint, b.keypoint));
            }
        }
    }

    const MIN_COVIS: usize = 8;
    let mut pairs = Vec::new();
    for a in 0..n_cams {
        for b in a + 1..n_cams {
            let list = &covis[a * n_cams + b];
            if list.len() < MIN_COVIS {
                continue;
            }
            let pair_index = (a * n_cams + b) as u64;
            let mut rng = stream(spec.seed, StreamKind::Outliers, pair_index);
            let n = list.len();
            let n_out = (spec.outlier_fraction * n as f64).round() as usize;
            // Outlier positions: sample without replacement.
            let mut idx: Vec<usize> = (0..n).collect();
            for k in 0..n_out {
                let swap = rng.random_range(k..n);
                idx.swap(k, swap);
            }
            let mut is_outlier = vec![false; n];
            for &k in idx.iter().take(n_out) {
                is_outlier[k] = true;
            }

            let kb = &scene.cameras[b].intrinsics;
            let mut matches = Vec::with_capacity(n);
            for (m, &(_, kp_a, kp_b)) in list.iter().enumerate() {
                let point_a = keypoints[a][kp_a].pixel;
                let (keypoint_b, point_b) = if is_outlier[m] {
                    // Spurious detection in image b.
                    let px = Vector2::new(
                        rng.random_range(0.0..kb.width as f64),
                        rng.random_range(0.0..kb.height as f64),
                    );
                    let id = keypoints[b].len();
                    keypoints[b].push(NoisyKeypoint { pixel: px, source_point: None });
                    (id, px)
                } else {
                    (kp_b, keypoints[b][kp_b].pixel)
                };
                matches.push(Match {
                    image_a: a,
                    image_b: b,
                    keypoint_a: kp_a,
                    keypoint_b,
                    point_a,
                    point_b,
                });
            }
            pairs.push(PairMatches { image_a: a, image_b: b, matches, is_outlier });
        }
    }

    NoisyObservations { keypoints, pairs }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_scene, Layout};

    #[test]
    fn zero_noise_matches_ground_truth() {
        let scene = generate_scene(6, 60, Layout::Orbit, 2).unwrap();
        let obs = corrupt_observations(&scene, &NoiseSpec::clean(2));
        assert!(obs.total_outliers() == 0);
        for pair in &obs.pairs {
            for m in &pair.matches {
                let kp = &obs.keypoints[m.image_a][m.keypoint_a];
                let pt = kp.source_point.unwrap();
                let track = &scene.tracks[pt];
                let gt = track
                    .observations
                    .iter()
                    .find(|o| o.camera == m.image_a)
                    .unwrap();
                assert_eq!(m.point_a, gt.pixel);
            }
        }
    }

    #[test]
    fn outlier_count_is_exact() {
        let scene = generate_scene(4, 400, Layout::Orbit, 3).unwrap();
        let spec = NoiseSpec { outlier_fraction: 0.2, ..NoiseSpec::clean(3) };
        let obs = corrupt_observations(&scene, &spec);
        for pair in &obs.pairs {
            let expected = (0.2 * pair.matches.len() as f64).round() as usize;
            let got = pair.is_outlier.iter().filter(|&&o| o).count();
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn pixel_noise_sigma_is_calibrated() {
        let scene = generate_scene(12, 900, Layout::Orbit, 4).unwrap();
        let spec = NoiseSpec { pixel_sigma: 1.0, ..NoiseSpec::clean(4) };
        let obs = corrupt_observations(&scene, &spec);
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for track in &scene.tracks {
            for gt in &track.observations {
                let noisy = obs.keypoints[gt.camera][gt.keypoint].pixel;
                let d = noisy - gt.pixel;
                sum_sq += d.x * d.x + d.y * d.y;
                count += 2;
            }
        }
        assert!(count >= 10_000, "need >= 1e4 samples, got {count}");
        let std = (sum_sq / count as f64).sqrt();
        assert!((std - 1.0).abs() < 0.05, "empirical std {std}");
    }

    #[test]
    fn deterministic_given_seed() {
        let scene = generate_scene(5, 80, Layout::Orbit, 6).unwrap();
        let spec = NoiseSpec { pixel_sigma: 0.7, outlier_fraction: 0.1, ..NoiseSpec::clean(6) };
        let a = corrupt_observations(&scene, &spec);
        let b = corrupt_observations(&scene, &spec);
        assert_eq!(a.total_matches(), b.total_matches());
        for (pa, pb) in a.pairs.iter().zip(&b.pairs) {
            assert_eq!(pa.matches, pb.matches);
        }
    }
}
