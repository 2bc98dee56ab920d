//! Image metadata, features, verified match pairs and the weighted match graph.

mod graph;
mod hull;
mod retrieval;
mod verify;
mod vocab;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ImageId;

pub use graph::{build_match_graph, edge_weight, pair_hull_areas, GraphEdge, MatchGraph};
pub use hull::convex_hull_area;
pub use retrieval::{rank_similar_images, retrieve_pairs, RetrievalIndex};
pub use verify::{mutual_matches, verify_matches, VerifyOptions};
pub use vocab::VocabularyTree;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MatchGraphError {
    #[error("image {0} is not in the dataset")]
    UnknownImage(ImageId),
    #[error("pair references image {0} twice")]
    SelfPair(ImageId),
    #[error("keypoint index {index} out of range for image {image}")]
    IndexOutOfRange { image: ImageId, index: usize },
    #[error("need at least {needed} descriptor samples, got {got}")]
    InsufficientSamples { needed: usize, got: usize },
    #[error("maximum inlier count {0} is too small for the log ratio")]
    InvalidMaxInlier(usize),
    #[error("invalid vocabulary shape: {0}")]
    InvalidVocabulary(&'static str),
    #[error("descriptor dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub image_id: ImageId,
    pub width: u32,
    pub height: u32,
    /// Index of the shared intrinsics record.
    pub camera_model: u32,
}

impl ImageMeta {
    pub fn new(image_id: ImageId, width: u32, height: u32) -> Self {
        Self { image_id, width, height, camera_model: 0 }
    }

    pub fn area(&self) -> f64 {
        self.width as f64 * self.height as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    pub scale: f64,
}

/// Keypoints of one image with optional fixed-length descriptors stored row-major.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FeatureSet {
    pub image_id: ImageId,
    pub keypoints: Vec<Keypoint>,
    pub descriptors: Vec<f32>,
    pub dim: usize,
}

impl FeatureSet {
    pub fn new(image_id: ImageId) -> Self {
        Self { image_id, ..Default::default() }
    }

    pub fn len(&self) -> usize {
        self.keypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keypoints.is_empty()
    }

    pub fn has_descriptors(&self) -> bool {
        self.dim > 0 && self.descriptors.len() == self.dim * self.keypoints.len()
    }

    pub fn descriptor(&self, i: usize) -> &[f32] {
        &self.descriptors[i * self.dim..(i + 1) * self.dim]
    }

    pub fn pixel(&self, i: usize) -> crate::Vec2 {
        let k = &self.keypoints[i];
        crate::Vec2::new(k.x, k.y)
    }

    /// Indices of the `n` largest-scale keypoints; ties keep the lower index.
    pub fn top_scale(&self, n: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.keypoints.len()).collect();
        idx.sort_by(|&a, &b| self.keypoints[b].scale.total_cmp(&self.keypoints[a].scale).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

/// Verified matches between two images, stored with `image_a < image_b`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchPair {
    pub image_a: ImageId,
    pub image_b: ImageId,
    pub matches: Vec<(usize, usize)>,
    pub inlier_count: usize,
}

impl MatchPair {
    pub fn new(a: ImageId, b: ImageId, mut matches: Vec<(usize, usize)>) -> Result<Self, MatchGraphError> {
        if a == b {
            return Err(MatchGraphError::SelfPair(a));
        }
        let (image_a, image_b) = if a < b {
            (a, b)
        } else {
            for m in &mut matches {
                *m = (m.1, m.0);
            }
            (b, a)
        };
        let inlier_count = matches.len();
        Ok(Self { image_a, image_b, matches, inlier_count })
    }

    pub fn key(&self) -> (ImageId, ImageId) {
        (self.image_a, self.image_b)
    }

    /// Matches oriented so that the first index belongs to `from`.
    pub fn oriented(&self, from: ImageId) -> Vec<(usize, usize)> {
        if from == self.image_a {
            self.matches.clone()
        } else {
            self.matches.iter().map(|&(x, y)| (y, x)).collect()
        }
    }

    pub fn other(&self, id: ImageId) -> ImageId {
        if id == self.image_a {
            self.image_b
        } else {
            self.image_a
        }
    }
}

/// All verified pairs of a dataset keyed by ordered image ids.
#[derive(Debug, Clone, Default)]
pub struct MatchStore {
    pairs: BTreeMap<(ImageId, ImageId), MatchPair>,
}

impl MatchStore {
    pub fn new(pairs: impl IntoIterator<Item = MatchPair>) -> Self {
        let mut store = Self::default();
        for p in pairs {
            store.insert(p);
        }
        store
    }

    pub fn insert(&mut self, pair: MatchPair) {
        self.pairs.insert(pair.key(), pair);
    }

    pub fn get(&self, a: ImageId, b: ImageId) -> Option<&MatchPair> {
        self.pairs.get(&(a.min(b), a.max(b)))
    }

    pub fn pairs(&self) -> impl Iterator<Item = &MatchPair> {
        self.pairs.values()
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Pairs with both endpoints inside `subset`.
    pub fn within<'a>(&'a self, subset: &'a std::collections::BTreeSet<ImageId>) -> impl Iterator<Item = &'a MatchPair> + 'a {
        self.pairs.values().filter(move |p| subset.contains(&p.image_a) && subset.contains(&p.image_b))
    }
}
