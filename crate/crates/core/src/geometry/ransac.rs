//! Shared pieces of the RANSAC loops.

use rand::seq::index;
use rand::Rng;

/// Number of iterations needed to draw at least one all-inlier sample of size
/// `sample_size` with probability `confidence`, given the current inlier ratio.
pub fn adaptive_iterations(inlier_ratio: f64, sample_size: usize, confidence: f64, max_iterations: usize) -> usize {
    if inlier_ratio <= 0.0 {
        return max_iterations;
    }
    if inlier_ratio >= 1.0 {
        return 1;
    }
    let all_inliers = inlier_ratio.powi(sample_size as i32);
    if all_inliers <= f64::EPSILON {
        return max_iterations;
    }
    let n = (1.0 - confidence).ln() / (1.0 - all_inliers).ln();
    if !n.is_finite() {
        return max_iterations;
    }
    (n.ceil() as usize).clamp(1, max_iterations)
}

/// Draws `k` distinct indices from `0..n`, sorted.
pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx = index::sample(rng, n, k).into_vec();
    idx.sort_unstable();
    idx
}
