//! Synthetic multi-view scenes with exact ground truth.
//!
//! Scenes stand in for a real feature-extraction front end: cameras,
//! colored 3D points, and the tracks/observations they induce are all known
//! exactly, which makes every downstream solver testable against oracles.

mod io;
mod noise;
pub mod rng;
mod scene;

pub use io::{read_scene, write_scene, SceneIoError};
pub use noise::{corrupt_observations, NoisyKeypoint, NoisyObservations, PairMatches};
pub use scene::{
    generate_scene, generate_scene_with, perturb_poses, render_reference_images, GtObservation,
    GtTrack, Layout, Scene, SceneCamera, SceneConfig, ScenePoint, SynthError,
};

use serde::{Deserialize, Serialize};

/// Observation corruption parameters. All magnitudes are non-negative;
/// `outlier_fraction` must stay below 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    /// Gaussian pixel noise applied to every observation.
    pub pixel_sigma: f64,
    /// Fraction of correspondences per pair replaced by random pixels.
    pub outlier_fraction: f64,
    /// Pose perturbation: rotation magnitude in degrees.
    pub pose_rotation_perturb_deg: f64,
    /// Pose perturbation: camera-center shift as a fraction of scene extent.
    pub pose_translation_perturb: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn clean(seed: u64) -> Self {
        NoiseSpec {
            pixel_sigma: 0.0,
            outlier_fraction: 0.0,
            pose_rotation_perturb_deg: 0.0,
            pose_translation_perturb: 0.0,
            seed,
        }
    }

    pub fn validate(&self) {
        assert!(self.pixel_sigma >= 0.0);
        assert!((0.0..0.5).contains(&self.outlier_fraction));
        assert!(self.pose_rotation_perturb_deg >= 0.0);
        assert!(self.pose_translation_perturb >= 0.0);
    }
}
