//! Track building and incremental reconstruction of an image subset.

mod adjust;
mod engine;
mod reconstruction;
mod tracks;
#[cfg(test)]
pub(crate) mod testing;

use thiserror::Error;

use crate::geometry::GeometryError;
use crate::ImageId;

pub use adjust::{bundle_adjust, filter_observations, local_bundle_adjust};
pub use engine::{incremental_reconstruct, select_seed_pair, EngineOptions, EngineResult, SceneData, SeedChoice};
pub use reconstruction::{CameraEntry, Observation, Reconstruction, ReconstructionError, ScenePoint};
pub use tracks::{build_tracks, Track};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SfmError {
    #[error("image subset is empty")]
    EmptySubset,
    #[error("no match pairs inside the subset")]
    NoPairs,
    #[error("image {0} has no intrinsics, metadata or features")]
    MissingImage(ImageId),
    #[error("no pair could initialize the reconstruction")]
    SeedFailed,
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}
