//! End-to-end orchestration: configuration, staged execution with on-disk
//! artifacts, evaluation metrics, and COLMAP text interchange.
//!
//! Stages communicate exclusively through files in the output directory
//! (scene, reference images, COLMAP export, joint checkpoint), so running
//! `sfm` and `joint` separately is bit-identical to one `pipeline` run
//! with the same seed.

pub mod colmap;
pub mod config;
pub mod metrics;
mod stages;

pub use colmap::{export_colmap_text, import_colmap_text, ColmapError};
pub use config::{JointStageConfig, NoiseStageConfig, PipelineConfig, SfmStageConfig, SynthStageConfig};
pub use metrics::{ate, rotation_error, MetricsError, MetricsRecord, RotationErrorSummary};
pub use stages::{
    run_eval_stage, run_export_stage, run_joint_stage, run_pipeline, run_sfm_stage,
    run_synth_stage, PipelineError, SfmStats,
};
