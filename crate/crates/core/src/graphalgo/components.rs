use std::collections::{BTreeSet, VecDeque};

use crate::matchgraph::MatchGraph;
use crate::ImageId;

/// Maximal connected vertex sets, ordered by their smallest id.
pub fn connected_components(graph: &MatchGraph) -> Vec<BTreeSet<ImageId>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for &start in graph.vertices() {
        if !seen.insert(start) {
            continue;
        }
        let mut comp = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(v) = queue.pop_front() {
            for (u, _) in graph.neighbors(v) {
                if seen.insert(u) {
                    comp.insert(u);
                    queue.push_back(u);
                }
            }
        }
        out.push(comp);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn find(p: &mut Vec<usize>, x: usize) -> usize {
        if p[x] != x {
            let r = find(p, p[x]);
            p[x] = r;
        }
        p[x]
    }

    #[test]
    fn edgeless_graph_gives_singletons() {
        let g = MatchGraph::with_vertices([4, 1, 7]);
        let c = connected_components(&g);
        assert_eq!(c, vec![BTreeSet::from([1]), BTreeSet::from([4]), BTreeSet::from([7])]);
    }

    #[test]
    fn connected_graph_gives_one() {
        let mut g = MatchGraph::default();
        for i in 0..5 {
            g.add_edge(i, i + 1, 0.5, 60).unwrap();
        }
        assert_eq!(connected_components(&g).len(), 1);
    }

    #[test]
    fn agrees_with_union_find() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let n = rng.gen_range(1..60usize);
            let mut g = MatchGraph::with_vertices(0..n as ImageId);
            let mut parent: Vec<usize> = (0..n).collect();
            for _ in 0..rng.gen_range(0..n + 1) {
                let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
                if a != b {
                    g.add_edge(a as ImageId, b as ImageId, 0.5, 50).unwrap();
                    let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                    parent[ra] = rb;
                }
            }
            let mut groups = std::collections::BTreeMap::<usize, BTreeSet<ImageId>>::new();
            for v in 0..n {
                let r = find(&mut parent, v);
                groups.entry(r).or_default().insert(v as ImageId);
            }
            let mut expect: Vec<_> = groups.into_values().collect();
            expect.sort_by_key(|s| *s.iter().next().unwrap());
            assert_eq!(connected_components(&g), expect);
        }
    }
}
