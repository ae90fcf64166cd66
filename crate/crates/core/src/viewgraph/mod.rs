//! Two-view layer: match ingestion, pairwise geometry estimation inside
//! RANSAC, focal estimation from fundamental matrices, and the view graph
//! connecting them.

mod fetzer;
mod five_point;
mod fundamental;
mod graph;
mod matches;
mod ransac;
mod relative;

pub use fetzer::{estimate_focal_fetzer, fetzer_residual, FetzerOptions, FundamentalEdge};
pub use five_point::five_point_candidates;
pub use fundamental::{estimate_fundamental_ransac, sampson_distance_sq};
pub use graph::{build_view_graph, estimate_edges, PairMatchSet, ViewGraph};
pub use matches::{parse_matches, read_matches, write_matches, Match, MatchIoError};
pub use ransac::RansacOptions;
pub use relative::{
    essential_from_pose, estimate_relative_pose, EssentialSolver, TwoViewOptions, ViewGraphEdge,
};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ViewGraphError {
    /// No image pair survived the minimum-match threshold.
    #[error("no pair has enough matches")]
    EmptyGraph,
    #[error("degenerate configuration: {what}")]
    DegenerateConfiguration { what: String },
    /// No essential decomposition won the cheirality vote by a clear margin
    /// (typical for pure-rotation pairs).
    #[error("cheirality vote ambiguous ({best} vs {second})")]
    CheiralityAmbiguous { best: usize, second: usize },
    #[error("no convergence after {iters} iterations")]
    NoConvergence { iters: usize },
}
