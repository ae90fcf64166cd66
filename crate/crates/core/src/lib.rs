//! Global structure from motion with joint Gaussian-splat pose refinement.
//!
//! The library covers the full reconstruction path on CPU:
//!
//! * [`geom`] — rotation/pose algebra on SO(3)/SE(3), pinhole projection,
//!   robust loss kernels.
//! * [`synth`] — synthetic scene generation with known ground truth,
//!   noise/outlier injection, pose perturbation.
//! * [`viewgraph`] — pairwise matching layer: fundamental/essential RANSAC,
//!   focal estimation from fundamental matrices, relative pose.
//! * [`rotavg`] — global rotation averaging (spanning-tree init, l1
//!   bootstrap, Geman-McClure IRLS).
//! * [`tracks`] — multi-view track building via union-find and
//!   reprojection-proximity merging.
//! * [`globalpos`] — camera translations and 3D points from ray-orthogonal
//!   residuals with rotations held fixed.
//! * [`ba`] — sparse robust bundle adjustment with Schur elimination and
//!   iterated outlier filtering.
//! * [`splat`] — differentiable CPU Gaussian-splat renderer with analytic
//!   gradients for all primitive parameters and the camera pose.
//! * [`joint`] — joint optimization of Gaussians, pose adjustments, and
//!   persistent track points under combined photometric and reprojection
//!   losses.
//! * [`pipeline`] — end-to-end orchestration, metrics, and interchange
//!   formats (scene files, COLMAP text, PPM/PNG images).
//!
//! Data-parallel inner loops (rendering, gradient accumulation, residual
//! assembly) run on rayon when the default `parallel` feature is enabled and
//! fall back to sequential execution without it. Both paths reduce partial
//! results in a fixed chunk order, so outputs are bit-identical regardless
//! of thread count or feature selection.

pub mod ba;
pub mod geom;
pub mod globalpos;
pub mod img;
pub mod joint;
pub mod parallel;
pub mod pipeline;
pub mod rotavg;
pub mod schur;
pub mod splat;
pub mod synth;
pub mod tracks;
pub mod viewgraph;
