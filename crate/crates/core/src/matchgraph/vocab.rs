use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::MatchGraphError;

const LLOYD_ITERATIONS: usize = 50;

/// Hierarchical k-means quantizer with exactly `branching^depth` leaves.
#[derive(Debug, Clone)]
pub struct VocabularyTree {
    branching: usize,
    depth: usize,
    dim: usize,
    // levels[l] holds branching^(l+1) centroids, row-major
    levels: Vec<Vec<f32>>,
}

fn dist2(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean(rows: &[&[f32]], dim: usize) -> Vec<f32> {
    let mut m = vec![0f64; dim];
    for r in rows {
        for (a, &v) in m.iter_mut().zip(r.iter()) {
            *a += v as f64;
        }
    }
    m.iter().map(|&v| (v / rows.len().max(1) as f64) as f32).collect()
}

fn nearest(centroids: &[Vec<f32>], x: &[f32]) -> usize {
    let mut best = 0;
    let mut best_d = f32::INFINITY;
    for (i, c) in centroids.iter().enumerate() {
        let d = dist2(c, x);
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    best
}

/// k-means++ seeding followed by Lloyd iterations. With fewer members than
/// `k`, members become their own centroids and the rest reuse `parent`.
fn kmeans(rows: &[&[f32]], k: usize, parent: &[f32], rng: &mut ChaCha8Rng) -> (Vec<Vec<f32>>, Vec<usize>) {
    if rows.len() <= k {
        let mut c: Vec<Vec<f32>> = rows.iter().map(|r| r.to_vec()).collect();
        c.resize(k, parent.to_vec());
        let assign = (0..rows.len()).collect();
        return (c, assign);
    }
    let mut centroids = vec![rows[rng.gen_range(0..rows.len())].to_vec()];
    let mut d2: Vec<f32> = rows.iter().map(|r| dist2(r, &centroids[0])).collect();
    while centroids.len() < k {
        let next = match WeightedIndex::new(&d2) {
            Ok(w) => w.sample(rng),
            // every remaining point coincides with a centroid
            Err(_) => rng.gen_range(0..rows.len()),
        };
        centroids.push(rows[next].to_vec());
        let c = centroids.last().unwrap();
        for (d, r) in d2.iter_mut().zip(rows) {
            *d = d.min(dist2(r, c));
        }
    }
    let dim = parent.len();
    let mut assign: Vec<usize> = rows.iter().map(|r| nearest(&centroids, r)).collect();
    for _ in 0..LLOYD_ITERATIONS {
        for (ci, c) in centroids.iter_mut().enumerate() {
            let members: Vec<&[f32]> = rows.iter().zip(&assign).filter(|(_, &a)| a == ci).map(|(r, _)| *r).collect();
            if !members.is_empty() {
                *c = mean(&members, dim);
            }
        }
        let next: Vec<usize> = rows.iter().map(|r| nearest(&centroids, r)).collect();
        if next == assign {
            break;
        }
        assign = next;
    }
    (centroids, assign)
}

impl VocabularyTree {
    /// Builds the tree from row-major `samples` of length `n·dim`.
    pub fn build(samples: &[f32], dim: usize, branching: usize, depth: usize, seed: u64) -> Result<Self, MatchGraphError> {
        if dim == 0 || samples.len() % dim != 0 {
            return Err(MatchGraphError::InvalidVocabulary("samples are not a whole number of rows"));
        }
        if depth > 0 && branching < 2 {
            return Err(MatchGraphError::InvalidVocabulary("branching must be at least 2"));
        }
        let leaves = branching.pow(depth as u32);
        let n = samples.len() / dim;
        if n < leaves {
            return Err(MatchGraphError::InsufficientSamples { needed: leaves, got: n });
        }
        let rows: Vec<&[f32]> = samples.chunks(dim).collect();
        let mut levels: Vec<Vec<f32>> = (1..=depth).map(|l| vec![0f32; branching.pow(l as u32) * dim]).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let root = mean(&rows, dim);
        // breadth-first so the RNG stream is consumed in a fixed order
        let mut frontier: Vec<(Vec<f32>, Vec<usize>)> = vec![(root, (0..n).collect())];
        for level in levels.iter_mut() {
            let mut next = Vec::with_capacity(frontier.len() * branching);
            for (node, (centroid, members)) in frontier.into_iter().enumerate() {
                let member_rows: Vec<&[f32]> = members.iter().map(|&i| rows[i]).collect();
                let (cs, assign) = kmeans(&member_rows, branching, &centroid, &mut rng);
                for (c, cent) in cs.into_iter().enumerate() {
                    let slot = (node * branching + c) * dim;
                    level[slot..slot + dim].copy_from_slice(&cent);
                    let child: Vec<usize> =
                        members.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(&m, _)| m).collect();
                    next.push((cent, child));
                }
            }
            frontier = next;
        }
        Ok(Self { branching, depth, dim, levels })
    }

    pub fn leaf_count(&self) -> usize {
        self.branching.pow(self.depth as u32)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Centroid of leaf `i`.
    pub fn leaf(&self, i: usize) -> &[f32] {
        match self.levels.last() {
            Some(l) => &l[i * self.dim..(i + 1) * self.dim],
            None => &[],
        }
    }

    /// Leaf word for a descriptor; ties go to the lower child index.
    pub fn quantize(&self, descriptor: &[f32]) -> usize {
        let mut node = 0;
        for level in &self.levels {
            let mut best = 0;
            let mut best_d = f32::INFINITY;
            for c in 0..self.branching {
                let slot = (node * self.branching + c) * self.dim;
                let d = dist2(&level[slot..slot + self.dim], descriptor);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            node = node * self.branching + best;
        }
        node
    }
}
