//! Numeric substrate: camera model, two-view geometry, triangulation,
//! resection, bundle adjustment and similarity estimation.
//!
//! Everything here is generic over [`Real`](crate::Real) and free of shared
//! mutable state; only [`ba::solve`] mutates the problem it is handed.

pub mod ba;
mod camera;
mod p3p;
pub mod ransac;
mod resection;
mod similarity;
mod triangulate;
mod twoview;

pub use camera::{
    angle_between, exp_so3, orthonormalize, project, rotation_angle, CameraIntrinsics,
    CameraPose,
};
pub use p3p::p3p;
pub use resection::{resect_camera, Resection, ResectionOptions};
pub use similarity::{umeyama_similarity, SimilarityEstimate, SimilarityTransform};
pub use triangulate::{rms_reprojection, triangulate, triangulate_unchecked, Sighting};
pub use twoview::{
    decompose_essential, essential_eight_point, estimate_relative_pose, sampson_error_px,
    RelativePose, TwoViewOptions,
};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("point is behind the camera (depth {depth})")]
    BehindCamera { depth: f64 },
    #[error("need at least {needed} inputs, got {got}")]
    NotEnoughData { needed: usize, got: usize },
    #[error("input lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("degenerate configuration: {0}")]
    Degenerate(&'static str),
    #[error("cheirality check failed")]
    Cheirality,
    #[error("robust estimation found no consensus")]
    NoConsensus,
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(&'static str),
    #[error("rotation is not orthonormal with determinant +1")]
    InvalidRotation,
}
