use std::collections::{BTreeMap, BTreeSet};

use super::{convex_hull_area, FeatureSet, ImageMeta, MatchGraphError, MatchPair};
use crate::ImageId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GraphEdge {
    pub a: ImageId,
    pub b: ImageId,
    pub weight: f64,
    pub inlier_count: usize,
}

/// Undirected weighted graph over image ids. One record per unordered pair.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatchGraph {
    vertices: BTreeSet<ImageId>,
    edges: BTreeMap<(ImageId, ImageId), GraphEdge>,
    adjacency: BTreeMap<ImageId, BTreeMap<ImageId, f64>>,
}

impl MatchGraph {
    pub fn with_vertices(vertices: impl IntoIterator<Item = ImageId>) -> Self {
        let mut g = Self::default();
        for v in vertices {
            g.add_vertex(v);
        }
        g
    }

    pub fn add_vertex(&mut self, v: ImageId) {
        self.vertices.insert(v);
        self.adjacency.entry(v).or_default();
    }

    /// Inserts or replaces the edge between `a` and `b`. Endpoints are added as needed.
    pub fn add_edge(&mut self, a: ImageId, b: ImageId, weight: f64, inlier_count: usize) -> Result<(), MatchGraphError> {
        if a == b {
            return Err(MatchGraphError::SelfPair(a));
        }
        let (a, b) = (a.min(b), a.max(b));
        self.add_vertex(a);
        self.add_vertex(b);
        self.edges.insert((a, b), GraphEdge { a, b, weight, inlier_count });
        self.adjacency.get_mut(&a).unwrap().insert(b, weight);
        self.adjacency.get_mut(&b).unwrap().insert(a, weight);
        Ok(())
    }

    pub fn vertices(&self) -> &BTreeSet<ImageId> {
        &self.vertices
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = &GraphEdge> {
        self.edges.values()
    }

    pub fn contains(&self, v: ImageId) -> bool {
        self.vertices.contains(&v)
    }

    pub fn edge(&self, a: ImageId, b: ImageId) -> Option<&GraphEdge> {
        self.edges.get(&(a.min(b), a.max(b)))
    }

    pub fn weight(&self, a: ImageId, b: ImageId) -> Option<f64> {
        self.edge(a, b).map(|e| e.weight)
    }

    /// Neighbors of `v` in ascending id order with edge weights.
    pub fn neighbors(&self, v: ImageId) -> impl Iterator<Item = (ImageId, f64)> + '_ {
        self.adjacency.get(&v).into_iter().flat_map(|m| m.iter().map(|(&u, &w)| (u, w)))
    }

    pub fn degree(&self, v: ImageId) -> usize {
        self.adjacency.get(&v).map_or(0, |m| m.len())
    }

    /// Subgraph induced by `subset` (ids absent from the graph are ignored).
    pub fn induced(&self, subset: &BTreeSet<ImageId>) -> MatchGraph {
        let mut g = MatchGraph::with_vertices(subset.iter().copied().filter(|v| self.contains(*v)));
        for e in self.edges.values() {
            if subset.contains(&e.a) && subset.contains(&e.b) {
                g.add_edge(e.a, e.b, e.weight, e.inlier_count).unwrap();
            }
        }
        g
    }
}

/// Convex-hull areas of the matched keypoints in each image of the pair.
pub fn pair_hull_areas(pair: &MatchPair, fa: &FeatureSet, fb: &FeatureSet) -> Result<(f64, f64), MatchGraphError> {
    let mut pa = Vec::with_capacity(pair.matches.len());
    let mut pb = Vec::with_capacity(pair.matches.len());
    for &(i, j) in &pair.matches {
        if i >= fa.len() {
            return Err(MatchGraphError::IndexOutOfRange { image: pair.image_a, index: i });
        }
        if j >= fb.len() {
            return Err(MatchGraphError::IndexOutOfRange { image: pair.image_b, index: j });
        }
        pa.push(fa.pixel(i));
        pb.push(fb.pixel(j));
    }
    Ok((convex_hull_area(&pa), convex_hull_area(&pb)))
}

/// Edge weight from the inlier count and the hull coverage of both images:
/// `r_ew·ln N/ln N_max + (1−r_ew)·(CH_a+CH_b)/(A_a+A_b)`, clamped to [0, 1].
pub fn edge_weight(
    inlier_count: usize,
    n_max_inlier: usize,
    hull_sum: f64,
    meta_a: &ImageMeta,
    meta_b: &ImageMeta,
    r_ew: f64,
) -> Result<f64, MatchGraphError> {
    if n_max_inlier < 2 {
        return Err(MatchGraphError::InvalidMaxInlier(n_max_inlier));
    }
    let count_term = if inlier_count == 0 { 0.0 } else { (inlier_count as f64).ln() / (n_max_inlier as f64).ln() };
    let coverage = hull_sum / (meta_a.area() + meta_b.area());
    let w = r_ew * count_term + (1.0 - r_ew) * coverage;
    Ok(w.clamp(0.0, 1.0))
}

/// Graph over every image in `metas`; pairs with fewer than `min_matches`
/// inliers are dropped and `N_max` is taken over the surviving pairs.
pub fn build_match_graph(
    pairs: &[MatchPair],
    metas: &BTreeMap<ImageId, ImageMeta>,
    features: &BTreeMap<ImageId, FeatureSet>,
    min_matches: usize,
    r_ew: f64,
) -> Result<MatchGraph, MatchGraphError> {
    let mut graph = MatchGraph::with_vertices(metas.keys().copied());
    let kept: Vec<&MatchPair> = pairs.iter().filter(|p| p.inlier_count >= min_matches).collect();
    let Some(n_max) = kept.iter().map(|p| p.inlier_count).max() else {
        return Ok(graph);
    };
    for p in kept {
        let ma = metas.get(&p.image_a).ok_or(MatchGraphError::UnknownImage(p.image_a))?;
        let mb = metas.get(&p.image_b).ok_or(MatchGraphError::UnknownImage(p.image_b))?;
        let fa = features.get(&p.image_a).ok_or(MatchGraphError::UnknownImage(p.image_a))?;
        let fb = features.get(&p.image_b).ok_or(MatchGraphError::UnknownImage(p.image_b))?;
        let (ha, hb) = pair_hull_areas(p, fa, fb)?;
        let w = edge_weight(p.inlier_count, n_max, ha + hb, ma, mb, r_ew)?;
        graph.add_edge(p.image_a, p.image_b, w, p.inlier_count)?;
    }
    Ok(graph)
}
