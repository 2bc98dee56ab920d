use std::collections::{BTreeMap, BTreeSet};

use super::{connected_components, GraphAlgoError};
use crate::matchgraph::MatchGraph;
use crate::ImageId;

#[derive(Debug, Clone, PartialEq)]
pub struct WcdsResult {
    /// Black vertices in the order they were scanned, component by component.
    pub selected_vertices: Vec<ImageId>,
    pub induced_subgraph: MatchGraph,
    pub r_vw: f64,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Color {
    White,
    Gray,
    Black,
}

/// Greedy white/gray/black scan. The next vertex is the gray one maximizing
/// `r_vw·N_ngb/N_max_ngb + (1−r_vw)·w`, with `w` its strongest edge to a black
/// vertex and `N_max_ngb` the largest initial degree of the component.
pub fn extract_wcds(graph: &MatchGraph, r_vw: f64) -> Result<WcdsResult, GraphAlgoError> {
    if !(0.0..=1.0).contains(&r_vw) {
        return Err(GraphAlgoError::InvalidRatio(r_vw));
    }
    let mut selected = Vec::new();
    for comp in connected_components(graph) {
        scan_component(graph, &comp, r_vw, &mut selected);
    }
    let set: BTreeSet<ImageId> = selected.iter().copied().collect();
    Ok(WcdsResult { induced_subgraph: graph.induced(&set), selected_vertices: selected, r_vw })
}

fn leave_white(graph: &MatchGraph, v: ImageId, white_nbrs: &mut BTreeMap<ImageId, usize>) {
    for (u, _) in graph.neighbors(v) {
        if let Some(c) = white_nbrs.get_mut(&u) {
            *c -= 1;
        }
    }
}

fn scan_component(graph: &MatchGraph, comp: &BTreeSet<ImageId>, r_vw: f64, out: &mut Vec<ImageId>) {
    let mut color: BTreeMap<ImageId, Color> = comp.iter().map(|&v| (v, Color::White)).collect();
    let mut white_nbrs: BTreeMap<ImageId, usize> = comp.iter().map(|&v| (v, graph.degree(v))).collect();
    // strongest edge from each gray vertex to the black set
    let mut link: BTreeMap<ImageId, f64> = BTreeMap::new();
    let n_max = white_nbrs.values().copied().max().unwrap_or(0);
    let mut whites = comp.len();

    // ascending scan with a strict comparison keeps the lowest id on ties
    let mut current = *comp.first().unwrap();
    for (&v, &d) in &white_nbrs {
        if d > white_nbrs[&current] {
            current = v;
        }
    }

    loop {
        if color[&current] == Color::White {
            whites -= 1;
            leave_white(graph, current, &mut white_nbrs);
        }
        color.insert(current, Color::Black);
        link.remove(&current);
        out.push(current);
        for (u, w) in graph.neighbors(current) {
            match color[&u] {
                Color::White => {
                    color.insert(u, Color::Gray);
                    whites -= 1;
                    leave_white(graph, u, &mut white_nbrs);
                    link.insert(u, w);
                }
                Color::Gray => {
                    let e = link.get_mut(&u).expect("gray vertex without a black neighbor");
                    *e = e.max(w);
                }
                Color::Black => {}
            }
        }
        if whites == 0 {
            break;
        }
        let mut best: Option<(ImageId, f64)> = None;
        for (&g, &w) in &link {
            let score = r_vw * white_nbrs[&g] as f64 / n_max as f64 + (1.0 - r_vw) * w;
            if best.is_none_or(|b| score > b.1) {
                best = Some((g, score));
            }
        }
        current = best.expect("white vertices remain but no gray vertex exists").0;
    }
}
