//! Aligning and fusing reconstructions, plus geo-referencing with ground control.

mod align;
mod correspondence;
mod georef;
mod merging;

use thiserror::Error;

use crate::geometry::GeometryError;

pub use align::{ransac_similarity, transform_residual, SimilarityFit, SimilarityRansacOptions};
pub use correspondence::{
    build_correspondence_graph, find_common_points, strategy_counts, CommonPair, CommonPointSet,
    CorrespondenceGraph, StrategyCounts,
};
pub use georef::{georeference, CheckResidual, CheckResidualTable, GcpRecord, GcpRole, GeoreferenceOptions};
pub use merging::{merge_all, merge_pair, MergeOptions, MergeReport, MergeStep};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MergeError {
    #[error("need at least 3 common points, got {0}")]
    NotEnoughPairs(usize),
    #[error("no consensus: {inliers} inliers out of {total}")]
    NoConsensus { inliers: usize, total: usize },
    #[error("need at least 3 triangulable control points, got {0}")]
    NotEnoughControls(usize),
    #[error("control points are degenerate: {0}")]
    DegenerateControls(GeometryError),
}
