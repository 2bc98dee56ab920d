use std::collections::{BTreeMap, BTreeSet};

use crate::matchgraph::MatchPair;
use crate::ImageId;

/// Observations of one scene feature, at most one per image, sorted by image.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub struct Track {
    pub observations: Vec<(ImageId, usize)>,
}

impl Track {
    pub fn len(&self) -> usize {
        self.observations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observations.is_empty()
    }

    pub fn keypoint_in(&self, image: ImageId) -> Option<usize> {
        self.observations.binary_search_by_key(&image, |o| o.0).ok().map(|i| self.observations[i].1)
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Union-find closure of the pairwise matches. Components that visit an image
/// twice are inconsistent and dropped. Output is sorted.
pub fn build_tracks<'a>(pairs: impl IntoIterator<Item = &'a MatchPair>) -> Vec<Track> {
    let mut ids: BTreeMap<(ImageId, usize), usize> = BTreeMap::new();
    let mut edges = Vec::new();
    for p in pairs {
        for &(i, j) in &p.matches {
            let n = ids.len();
            let a = *ids.entry((p.image_a, i)).or_insert(n);
            let n = ids.len();
            let b = *ids.entry((p.image_b, j)).or_insert(n);
            edges.push((a, b));
        }
    }
    let mut parent: Vec<usize> = (0..ids.len()).collect();
    for (a, b) in edges {
        let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
        if ra != rb {
            parent[ra.max(rb)] = ra.min(rb);
        }
    }
    let mut groups: BTreeMap<usize, Vec<(ImageId, usize)>> = BTreeMap::new();
    for (&node, &idx) in &ids {
        let r = find(&mut parent, idx);
        groups.entry(r).or_default().push(node);
    }
    let mut tracks: Vec<Track> = groups
        .into_values()
        .filter(|obs| {
            let images: BTreeSet<ImageId> = obs.iter().map(|o| o.0).collect();
            obs.len() >= 2 && images.len() == obs.len()
        })
        .map(|mut observations| {
            observations.sort();
            Track { observations }
        })
        .collect();
    tracks.sort();
    tracks
}
