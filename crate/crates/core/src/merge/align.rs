use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{CommonPair, CommonPointSet, MergeError};
use crate::geometry::ransac::{adaptive_iterations, sample};
use crate::geometry::{project, umeyama_similarity};
use crate::sfm::Reconstruction;
use crate::{Point3, Similarity};

/// Bi-directional reprojection residual of one common pair under `t`
/// (source frame → reference frame): the source point mapped into the `m`
/// reference cameras and the reference point mapped back into the `l` source
/// cameras, `sqrt(Σ‖e‖² / (m + l))`. Infinite when any projection is behind a camera.
pub fn transform_residual(pair: &CommonPair, t: &Similarity, source: &Reconstruction, reference: &Reconstruction) -> f64 {
    let (Some(sp), Some(rp)) = (source.points.get(&pair.source), reference.points.get(&pair.reference)) else {
        return f64::INFINITY;
    };
    let forward = t.apply(&sp.position);
    let backward = t.inverse().apply(&rp.position);
    let mut sum = 0.0;
    let mut n = 0usize;
    for (model, point, obs) in [(reference, forward, &rp.observations), (source, backward, &sp.observations)] {
        for o in obs {
            let Some(cam) = model.cameras.get(&o.image_id) else { return f64::INFINITY };
            match project(&cam.intrinsics, &cam.pose, &point) {
                Ok(px) => sum += (px - o.pixel).norm_squared(),
                Err(_) => return f64::INFINITY,
            }
            n += 1;
        }
    }
    if n == 0 {
        return f64::INFINITY;
    }
    (sum / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy)]
pub struct SimilarityRansacOptions {
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub min_inlier_ratio: f64,
    pub seed: u64,
}

impl Default for SimilarityRansacOptions {
    fn default() -> Self {
        Self { threshold_px: 1.8, confidence: 0.999, max_iterations: 10_000, min_inlier_ratio: 0.2, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityFit {
    /// Maps source coordinates into the reference frame.
    pub transform: Similarity,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
    /// Mean squared 3D alignment error over the inliers.
    pub mse: f64,
    pub iterations: usize,
}

impl SimilarityFit {
    pub fn inlier_ratio(&self) -> f64 {
        self.inlier_count as f64 / self.inliers.len().max(1) as f64
    }
}

fn score(
    common: &CommonPointSet,
    t: &Similarity,
    source: &Reconstruction,
    reference: &Reconstruction,
    threshold: f64,
) -> (usize, f64, Vec<bool>) {
    let mut count = 0;
    let mut sum = 0.0;
    let mask = common
        .pairs
        .iter()
        .map(|p| {
            let r = transform_residual(p, t, source, reference);
            let ok = r <= threshold;
            if ok {
                count += 1;
                sum += r * r;
            }
            ok
        })
        .collect();
    (count, sum, mask)
}

/// Minimal-sample RANSAC over common points with closed-form similarity
/// models, scored by the bi-directional residual and refit on the inliers.
pub fn ransac_similarity(
    common: &CommonPointSet,
    source: &Reconstruction,
    reference: &Reconstruction,
    opts: &SimilarityRansacOptions,
) -> Result<SimilarityFit, MergeError> {
    let n = common.len();
    if n < 3 {
        return Err(MergeError::NotEnoughPairs(n));
    }
    let src: Vec<Point3> = common.pairs.iter().map(|p| source.points[&p.source].position).collect();
    let dst: Vec<Point3> = common.pairs.iter().map(|p| reference.points[&p.reference].position).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, f64, Vec<bool>, Similarity)> = None;
    let mut needed = opts.max_iterations;
    let mut iterations = 0;
    while iterations < needed {
        iterations += 1;
        let idx = sample(&mut rng, n, 3);
        let s: Vec<Point3> = idx.iter().map(|&i| src[i]).collect();
        let d: Vec<Point3> = idx.iter().map(|&i| dst[i]).collect();
        let Ok(est) = umeyama_similarity(&s, &d) else { continue };
        let (count, sum, mask) = score(common, &est.transform, source, reference, opts.threshold_px);
        let better = best.as_ref().is_none_or(|b| count > b.0 || (count == b.0 && sum < b.1));
        if better && count > 0 {
            needed = adaptive_iterations(count as f64 / n as f64, 3, opts.confidence, opts.max_iterations);
            best = Some((count, sum, mask, est.transform));
        }
    }
    let Some((mut count, mut sum, mut mask, mut transform)) = best else {
        return Err(MergeError::NoConsensus { inliers: 0, total: n });
    };
    // refit on the consensus set while it keeps improving
    for _ in 0..5 {
        let s: Vec<Point3> = (0..n).filter(|&i| mask[i]).map(|i| src[i]).collect();
        let d: Vec<Point3> = (0..n).filter(|&i| mask[i]).map(|i| dst[i]).collect();
        let Ok(est) = umeyama_similarity(&s, &d) else { break };
        let (c, sm, m) = score(common, &est.transform, source, reference, opts.threshold_px);
        if c > count || (c == count && sm < sum) {
            (count, sum, mask, transform) = (c, sm, m, est.transform);
        } else {
            break;
        }
    }
    if count < 3 || (count as f64) < opts.min_inlier_ratio * n as f64 {
        return Err(MergeError::NoConsensus { inliers: count, total: n });
    }
    let s: Vec<Point3> = (0..n).filter(|&i| mask[i]).map(|i| src[i]).collect();
    let d: Vec<Point3> = (0..n).filter(|&i| mask[i]).map(|i| dst[i]).collect();
    let mse = transform.mse(&s, &d);
    Ok(SimilarityFit { transform, inlier_count: count, inliers: mask, mse, iterations })
}
