use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{FeatureSet, MatchPair};
use crate::geometry::{estimate_relative_pose, TwoViewOptions};
use crate::{ImageId, Intrinsics};

#[derive(Debug, Clone, Copy)]
pub struct VerifyOptions {
    /// Nearest over second-nearest distance must stay below this.
    pub ratio: f32,
    /// Pairs with fewer geometric inliers are dropped.
    pub min_inliers: usize,
    pub two_view: TwoViewOptions,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { ratio: 0.8, min_inliers: 16, two_view: TwoViewOptions::default() }
    }
}

fn nearest_two(q: &[f32], set: &FeatureSet) -> (usize, f32, f32) {
    let (mut best, mut d1, mut d2) = (usize::MAX, f32::INFINITY, f32::INFINITY);
    for j in 0..set.len() {
        let d: f32 = q.iter().zip(set.descriptor(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        if d < d1 {
            d2 = d1;
            d1 = d;
            best = j;
        } else if d < d2 {
            d2 = d;
        }
    }
    (best, d1, d2)
}

/// Mutual nearest neighbours passing the ratio test from `a` to `b`.
pub fn mutual_matches(a: &FeatureSet, b: &FeatureSet, ratio: f32) -> Vec<(usize, usize)> {
    if !a.has_descriptors() || !b.has_descriptors() || a.dim != b.dim || b.is_empty() {
        return Vec::new();
    }
    let back: Vec<usize> = (0..b.len()).map(|j| nearest_two(b.descriptor(j), a).0).collect();
    let r2 = ratio * ratio;
    (0..a.len())
        .filter_map(|i| {
            let (j, d1, d2) = nearest_two(a.descriptor(i), b);
            (j != usize::MAX && d1 < r2 * d2 && back[j] == i).then_some((i, j))
        })
        .collect()
}

/// Descriptor matching plus essential-matrix RANSAC for each candidate pair.
/// Pairs that fail either stage are dropped.
pub fn verify_matches(
    candidates: &[(ImageId, ImageId)],
    features: &BTreeMap<ImageId, FeatureSet>,
    intrinsics: &BTreeMap<ImageId, Intrinsics>,
    opts: &VerifyOptions,
) -> Vec<MatchPair> {
    candidates
        .par_iter()
        .filter_map(|&(a, b)| {
            let (fa, fb) = (features.get(&a)?, features.get(&b)?);
            let (ka, kb) = (intrinsics.get(&a)?, intrinsics.get(&b)?);
            let putative = mutual_matches(fa, fb, opts.ratio);
            if putative.len() < opts.min_inliers.max(8) {
                return None;
            }
            let pixels: Vec<_> = putative.iter().map(|&(i, j)| (fa.pixel(i), fb.pixel(j))).collect();
            let seed = opts.two_view.seed ^ ((a as u64) << 32 | b as u64);
            let tv = TwoViewOptions { seed, ..opts.two_view };
            let rel = estimate_relative_pose(&pixels, ka, kb, &tv).ok()?;
            let kept: Vec<(usize, usize)> =
                putative.iter().zip(&rel.inliers).filter(|(_, &ok)| ok).map(|(m, _)| *m).collect();
            if kept.len() < opts.min_inliers {
                return None;
            }
            MatchPair::new(a, b, kept).ok()
        })
        .collect()
}
