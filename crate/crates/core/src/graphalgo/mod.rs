//! Skeleton extraction and graph partitioning over the match graph.

mod components;
mod ncut;
mod wcds;

use thiserror::Error;

pub use components::connected_components;
pub use ncut::{ncut_value, normalized_cut, Clustering};
pub use wcds::{extract_wcds, WcdsResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphAlgoError {
    #[error("weight ratio {0} is outside [0, 1]")]
    InvalidRatio(f64),
    #[error("cluster size limit must be at least 2, got {0}")]
    InvalidMaxSize(usize),
}
