use crate::synth::Layout;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

/// Full pipeline configuration; a TOML document with CLI overrides.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    /// Directory with externally computed matches (`matches.txt` plus a
    /// COLMAP-style `cameras.txt`); when absent the synthetic source is
    /// used.
    pub match_dir: Option<PathBuf>,
    pub synth: SynthStageConfig,
    pub noise: NoiseStageConfig,
    pub sfm: SfmStageConfig,
    pub joint: JointStageConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 42,
            match_dir: None,
            synth: SynthStageConfig::default(),
            noise: NoiseStageConfig::default(),
            sfm: SfmStageConfig::default(),
            joint: JointStageConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthStageConfig {
    pub n_cameras: usize,
    pub n_points: usize,
    pub layout: Layout,
    pub image_size: usize,
}

impl Default for SynthStageConfig {
    fn default() -> Self {
        SynthStageConfig { n_cameras: 20, n_points: 1000, layout: Layout::Orbit, image_size: 64 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseStageConfig {
    pub pixel_sigma: f64,
    pub outlier_fraction: f64,
}

impl Default for NoiseStageConfig {
    fn default() -> Self {
        NoiseStageConfig { pixel_sigma: 0.0, outlier_fraction: 0.0 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SfmStageConfig {
    pub min_matches_per_pair: usize,
    pub ransac_threshold_px: f64,
    pub ransac_max_iters: usize,
    /// Debug fallback: eight-point essential instead of five-point.
    pub eight_point_fallback: bool,
    /// Run focal estimation before relative poses (uncalibrated input).
    pub estimate_focal: bool,
    pub huber_delta_px: f64,
    pub filter_thresholds_px: Vec<f64>,
    pub optimize_intrinsics: bool,
    pub merge_px: f64,
    pub min_parallax_deg: f64,
}

impl Default for SfmStageConfig {
    fn default() -> Self {
        SfmStageConfig {
            min_matches_per_pair: 16,
            ransac_threshold_px: 1.0,
            ransac_max_iters: 1000,
            eight_point_fallback: false,
            estimate_focal: false,
            huber_delta_px: 2.0,
            filter_thresholds_px: vec![8.0, 4.0, 2.0],
            optimize_intrinsics: false,
            merge_px: 2.0,
            min_parallax_deg: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct JointStageConfig {
    pub iterations: usize,
    pub lambda_ba: f64,
    pub huber_delta_px: f64,
    pub lambda_ssim: f64,
    pub lr_pose: f64,
    pub lr_position: f64,
    pub lr_scale: f64,
    pub lr_rotation: f64,
    pub lr_opacity: f64,
    pub lr_sh: f64,
    pub lr_track_point: f64,
    pub ablation: crate::joint::Ablation,
    /// Every n-th camera is held out of photometric training.
    pub holdout_every: usize,
    pub sh_degree: usize,
    pub batch_size: usize,
}

impl Default for JointStageConfig {
    fn default() -> Self {
        JointStageConfig {
            iterations: 3000,
            lambda_ba: 1e-4,
            huber_delta_px: 1.0,
            lambda_ssim: 0.2,
            lr_pose: 1e-5,
            lr_position: 1.6e-4,
            lr_scale: 5e-3,
            lr_rotation: 1e-3,
            lr_opacity: 5e-2,
            lr_sh: 2.5e-3,
            lr_track_point: 1e-4,
            ablation: crate::joint::Ablation::Full,
            holdout_every: 8,
            sh_degree: 0,
            batch_size: 1,
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text)
            .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e.to_string()))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, toml::to_string_pretty(self).expect("serializable config"))
    }

    /// Held-out camera indices (photometric evaluation set).
    pub fn holdout_cameras(&self, n_cameras: usize) -> Vec<usize> {
        let every = self.joint.holdout_every.max(1);
        (0..n_cameras).filter(|i| i % every == 0).collect()
    }

    pub fn train_cameras(&self, n_cameras: usize) -> Vec<usize> {
        let every = self.joint.holdout_every.max(1);
        (0..n_cameras).filter(|i| i % every != 0).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = PipelineConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.toml");
        cfg.save(&path).unwrap();
        let back = PipelineConfig::load(&path).unwrap();
        assert_eq!(back.seed, cfg.seed);
        assert_eq!(back.synth.n_cameras, cfg.synth.n_cameras);
        assert_eq!(back.sfm.filter_thresholds_px, cfg.sfm.filter_thresholds_px);
        assert_eq!(back.joint.ablation, cfg.joint.ablation);
    }

    #[test]
    fn holdout_split() {
        let cfg = PipelineConfig::default();
        let holdout = cfg.holdout_cameras(20);
        assert_eq!(holdout, vec![0, 8, 16]);
        let train = cfg.train_cameras(20);
        assert_eq!(train.len(), 17);
        assert!(holdout.iter().all(|h| !train.contains(h)));
    }
}
