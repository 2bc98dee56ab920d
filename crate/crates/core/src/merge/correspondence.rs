use std::collections::{BTreeMap, BTreeSet, HashMap};

use crate::matchgraph::MatchStore;
use crate::sfm::Reconstruction;
use crate::{ImageId, PointId};

/// Feature links from source observations to reference features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CorrespondenceGraph {
    pub links: BTreeMap<(ImageId, usize), Vec<(ImageId, usize)>>,
    /// Match pairs read from the store.
    pub loaded_match_count: usize,
    /// Feature matches inside those pairs.
    pub loaded_feature_matches: usize,
}

/// Match pairs each loading strategy would read for one merge step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct StrategyCounts {
    /// Pairs joining a source image to a reference image.
    pub on_demand: usize,
    /// Pairs with both images anywhere in the two reconstructions.
    pub pairwise: usize,
    /// Every pair of the dataset.
    pub all: usize,
}

pub fn strategy_counts(store: &MatchStore, source: &BTreeSet<ImageId>, reference: &BTreeSet<ImageId>) -> StrategyCounts {
    let mut c = StrategyCounts { on_demand: 0, pairwise: 0, all: store.len() };
    for p in store.pairs() {
        let (a, b) = (p.image_a, p.image_b);
        if (source.contains(&a) && reference.contains(&b)) || (source.contains(&b) && reference.contains(&a)) {
            c.on_demand += 1;
        }
        let inside = |i: ImageId| source.contains(&i) || reference.contains(&i);
        if inside(a) && inside(b) {
            c.pairwise += 1;
        }
    }
    c
}

/// Loads only the pairs joining a source image to a reference image. Images
/// registered in both models also link each observed feature to itself.
pub fn build_correspondence_graph(source: &Reconstruction, reference: &Reconstruction, store: &MatchStore) -> CorrespondenceGraph {
    let s = source.images();
    let r = reference.images();
    let mut links: BTreeMap<(ImageId, usize), Vec<(ImageId, usize)>> = BTreeMap::new();
    let mut cg = CorrespondenceGraph::default();
    for p in store.pairs() {
        let forward = s.contains(&p.image_a) && r.contains(&p.image_b);
        let backward = s.contains(&p.image_b) && r.contains(&p.image_a);
        if !forward && !backward {
            continue;
        }
        cg.loaded_match_count += 1;
        cg.loaded_feature_matches += p.matches.len();
        for &(i, j) in &p.matches {
            if forward {
                links.entry((p.image_a, i)).or_default().push((p.image_b, j));
            }
            if backward {
                links.entry((p.image_b, j)).or_default().push((p.image_a, i));
            }
        }
    }
    let shared: BTreeSet<ImageId> = s.intersection(&r).copied().collect();
    if !shared.is_empty() {
        for pt in source.points.values() {
            for o in &pt.observations {
                if shared.contains(&o.image_id) {
                    links.entry((o.image_id, o.keypoint)).or_default().push((o.image_id, o.keypoint));
                }
            }
        }
    }
    for v in links.values_mut() {
        v.sort_unstable();
        v.dedup();
    }
    cg.links = links;
    cg
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct CommonPair {
    pub source: PointId,
    pub reference: PointId,
    /// Feature links supporting the pair.
    pub links: usize,
    /// Reference cameras observing the reference point.
    pub m: usize,
    /// Source cameras observing the source point.
    pub l: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CommonPointSet {
    pub pairs: Vec<CommonPair>,
}

impl CommonPointSet {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Follows each source point's observations through the graph to reference
/// points. A source point keeps the reference point with the most links
/// (ties: lower id); a reference point keeps the best supported source point.
pub fn find_common_points(cg: &CorrespondenceGraph, source: &Reconstruction, reference: &Reconstruction) -> CommonPointSet {
    let ref_index: HashMap<(ImageId, usize), PointId> = reference.keypoint_index();
    let mut best_for_ref: BTreeMap<PointId, CommonPair> = BTreeMap::new();
    for (&sid, sp) in &source.points {
        let mut votes: BTreeMap<PointId, usize> = BTreeMap::new();
        for o in &sp.observations {
            if let Some(targets) = cg.links.get(&(o.image_id, o.keypoint)) {
                for t in targets {
                    if let Some(&rid) = ref_index.get(t) {
                        *votes.entry(rid).or_insert(0) += 1;
                    }
                }
            }
        }
        let Some((&rid, &n)) = votes.iter().fold(None, |best: Option<(&PointId, &usize)>, (k, v)| match best {
            Some((_, bv)) if *bv >= *v => best,
            _ => Some((k, v)),
        }) else {
            continue;
        };
        let pair = CommonPair {
            source: sid,
            reference: rid,
            links: n,
            m: reference.points[&rid].observations.len(),
            l: sp.observations.len(),
        };
        match best_for_ref.get(&rid) {
            Some(prev) if prev.links >= n => {}
            _ => {
                best_for_ref.insert(rid, pair);
            }
        }
    }
    let mut pairs: Vec<CommonPair> = best_for_ref.into_values().collect();
    pairs.sort_by_key(|p| (p.source, p.reference));
    CommonPointSet { pairs }
}
