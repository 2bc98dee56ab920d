//! Parallel structure-from-motion built around a weighted connected dominating
//! set (WCDS) skeleton.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`] – pinhole projection, two-view geometry, triangulation,
//!   resection, bundle adjustment and closed-form similarity estimation.
//! * [`matchgraph`] – vocabulary retrieval, match verification, edge weighting
//!   and the undirected match graph.
//! * [`graphalgo`] – WCDS skeleton extraction, normalized-cut clustering and
//!   connected components.
//! * [`sfm`] – track building and the incremental reconstruction engine.
//! * [`merge`] – on-demand correspondence graph, similarity RANSAC, cluster
//!   merging and GCP geo-referencing.
//! * [`pipeline`] – configuration, synthetic data, evaluation and the end to end
//!   driver.
//! * [`io`] – the line-oriented text formats.
//!
//! Geometric kernels are generic over [`Real`]; the aliases below fix the
//! scalar to `f64`, which is what the reconstruction engine uses.

pub mod geometry;
pub mod graphalgo;
pub mod io;
pub mod matchgraph;
pub mod merge;
pub mod pipeline;
pub mod scalar;
pub mod sfm;

pub use scalar::Real;

/// Image identifier.
pub type ImageId = u32;
/// 3D point identifier inside a reconstruction.
pub type PointId = u64;

pub type Vec2 = nalgebra::Vector2<f64>;
pub type Vec3 = nalgebra::Vector3<f64>;
pub type Mat3 = nalgebra::Matrix3<f64>;
pub type Point3 = nalgebra::Point3<f64>;

pub type Intrinsics = geometry::CameraIntrinsics<f64>;
pub type Pose = geometry::CameraPose<f64>;
pub type Similarity = geometry::SimilarityTransform<f64>;
pub type BaProblem = geometry::ba::BaProblem<f64>;

pub type Intrinsics32 = geometry::CameraIntrinsics<f32>;
pub type Pose32 = geometry::CameraPose<f32>;
pub type Similarity32 = geometry::SimilarityTransform<f32>;

pub use geometry::GeometryError;
pub use graphalgo::{Clustering, WcdsResult};
pub use matchgraph::{FeatureSet, ImageMeta, MatchGraph, MatchPair, MatchStore};
pub use merge::{CommonPointSet, CorrespondenceGraph, GcpRecord, MergeReport};
pub use pipeline::{EvalMetrics, PipelineConfig};
pub use sfm::{Reconstruction, SceneData, Track};
