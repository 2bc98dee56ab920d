//! Reference implementations used as oracles by the integration tests. They
//! work on plain adjacency lists and share no code with the library.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};

use parsfm::{ImageId, MatchGraph};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub struct Adjacency {
    pub n: usize,
    pub nbrs: Vec<Vec<(usize, f64)>>,
}

impl Adjacency {
    pub fn new(n: usize) -> Self {
        Self { n, nbrs: vec![Vec::new(); n] }
    }

    pub fn has_edge(&self, a: usize, b: usize) -> bool {
        self.nbrs[a].iter().any(|&(u, _)| u == b)
    }

    pub fn add(&mut self, a: usize, b: usize, w: f64) {
        if a != b && !self.has_edge(a, b) {
            self.nbrs[a].push((b, w));
            self.nbrs[b].push((a, w));
        }
    }

    pub fn to_graph(&self) -> MatchGraph {
        let mut g = MatchGraph::with_vertices((0..self.n).map(|v| v as ImageId));
        for a in 0..self.n {
            for &(b, w) in &self.nbrs[a] {
                if a < b {
                    g.add_edge(a as ImageId, b as ImageId, w, 100).unwrap();
                }
            }
        }
        g
    }

    pub fn is_connected(&self) -> bool {
        self.n == 0 || self.reachable(0, &(0..self.n).collect()).len() == self.n
    }

    /// Vertices of `within` reachable from `start` using only `within`.
    pub fn reachable(&self, start: usize, within: &BTreeSet<usize>) -> BTreeSet<usize> {
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for &(u, _) in &self.nbrs[v] {
                if within.contains(&u) && seen.insert(u) {
                    queue.push_back(u);
                }
            }
        }
        seen
    }

    pub fn dominates(&self, set: &BTreeSet<usize>) -> bool {
        (0..self.n).all(|v| set.contains(&v) || self.nbrs[v].iter().any(|(u, _)| set.contains(u)))
    }

    pub fn induced_connected(&self, set: &BTreeSet<usize>) -> bool {
        match set.first() {
            None => self.n == 0,
            Some(&s) => self.reachable(s, set).len() == set.len(),
        }
    }
}

/// Random spanning tree plus extra edges, weights uniform in (0, 1].
pub fn random_connected(rng: &mut ChaCha8Rng, n: usize) -> Adjacency {
    let mut g = Adjacency::new(n);
    for v in 1..n {
        let u = rng.gen_range(0..v);
        g.add(u, v, rng.gen_range(0.01..=1.0));
    }
    let extra = rng.gen_range(0..=3 * n);
    for _ in 0..extra {
        let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
        g.add(a, b, rng.gen_range(0.01..=1.0));
    }
    g
}

/// Points in the unit square joined within `radius`; the weight falls
/// linearly with distance. Resampled until connected.
pub fn random_geometric(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> Adjacency {
    loop {
        let pts: Vec<(f64, f64)> = (0..n).map(|_| (rng.gen::<f64>(), rng.gen::<f64>())).collect();
        let mut g = Adjacency::new(n);
        for a in 0..n {
            for b in a + 1..n {
                let d = ((pts[a].0 - pts[b].0).powi(2) + (pts[a].1 - pts[b].1).powi(2)).sqrt();
                if d <= radius {
                    g.add(a, b, 1.0 - d / radius * 0.99);
                }
            }
        }
        if g.is_connected() {
            return g;
        }
    }
}

/// Classic greedy connected dominating set by white-neighbour count. Starts
/// at the highest-degree vertex; ties go to the lowest index.
pub fn greedy_cds(g: &Adjacency) -> Vec<usize> {
    #[derive(Clone, Copy, PartialEq)]
    enum C {
        W,
        G,
        B,
    }
    let mut color = vec![C::W; g.n];
    let white_count = |color: &[C], v: usize| g.nbrs[v].iter().filter(|(u, _)| color[*u] == C::W).count();
    let mut current = (0..g.n).max_by(|&a, &b| g.nbrs[a].len().cmp(&g.nbrs[b].len()).then(b.cmp(&a))).unwrap();
    let mut out = Vec::new();
    loop {
        color[current] = C::B;
        out.push(current);
        for &(u, _) in &g.nbrs[current] {
            if color[u] == C::W {
                color[u] = C::G;
            }
        }
        if !color.contains(&C::W) {
            return out;
        }
        let mut best: Option<(usize, usize)> = None;
        for v in 0..g.n {
            if color[v] != C::G {
                continue;
            }
            let c = white_count(&color, v);
            if best.is_none_or(|(_, bc)| c > bc) {
                best = Some((v, c));
            }
        }
        current = best.unwrap().0;
    }
}

pub fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Sample standard deviation (n − 1).
pub fn sample_std(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
