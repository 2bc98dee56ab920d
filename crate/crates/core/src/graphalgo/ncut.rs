use std::collections::{BTreeMap, BTreeSet};

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use super::{connected_components, GraphAlgoError};
use crate::matchgraph::MatchGraph;
use crate::ImageId;

/// Dense eigendecomposition below this vertex count, Lanczos above.
const DENSE_LIMIT: usize = 512;
const EIGEN_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Disjoint clusters ordered by smallest id.
    pub clusters: Vec<BTreeSet<ImageId>>,
    pub max_size: usize,
}

impl Clustering {
    pub fn cluster_of(&self, v: ImageId) -> Option<usize> {
        self.clusters.iter().position(|c| c.contains(&v))
    }
}

/// `cut(A,B)/assoc(A,V) + cut(A,B)/assoc(B,V)` for the bipartition given by `part_a`.
pub fn ncut_value(graph: &MatchGraph, part_a: &BTreeSet<ImageId>) -> f64 {
    let (mut cut, mut assoc_a, mut assoc_b) = (0.0, 0.0, 0.0);
    for e in graph.edges() {
        let (ia, ib) = (part_a.contains(&e.a), part_a.contains(&e.b));
        match (ia, ib) {
            (true, true) => assoc_a += 2.0 * e.weight,
            (false, false) => assoc_b += 2.0 * e.weight,
            _ => {
                cut += e.weight;
                assoc_a += e.weight;
                assoc_b += e.weight;
            }
        }
    }
    if assoc_a == 0.0 || assoc_b == 0.0 {
        return f64::INFINITY;
    }
    cut / assoc_a + cut / assoc_b
}

/// Recursive spectral bisection until every cluster has at most `max_size`
/// vertices. Each part is split into connected pieces before recursing, so
/// isolated vertices end up as singletons.
pub fn normalized_cut(graph: &MatchGraph, max_size: usize) -> Result<Clustering, GraphAlgoError> {
    if max_size < 2 {
        return Err(GraphAlgoError::InvalidMaxSize(max_size));
    }
    let mut clusters = Vec::new();
    let mut stack: Vec<BTreeSet<ImageId>> = connected_components(graph);
    stack.reverse();
    while let Some(set) = stack.pop() {
        if set.len() <= max_size {
            clusters.push(set);
            continue;
        }
        let sub = graph.induced(&set);
        let (a, b) = bisect(&sub, DENSE_LIMIT);
        for part in [a, b] {
            let mut pieces = connected_components(&sub.induced(&part));
            pieces.reverse();
            stack.extend(pieces);
        }
    }
    clusters.sort_by_key(|c| *c.first().unwrap());
    Ok(Clustering { clusters, max_size })
}

struct Dense {
    ids: Vec<ImageId>,
    adj: Vec<Vec<(usize, f64)>>,
    degree: Vec<f64>,
}

impl Dense {
    fn new(graph: &MatchGraph) -> Self {
        let ids: Vec<ImageId> = graph.vertices().iter().copied().collect();
        let index: BTreeMap<ImageId, usize> = ids.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let adj: Vec<Vec<(usize, f64)>> =
            ids.iter().map(|&v| graph.neighbors(v).map(|(u, w)| (index[&u], w)).collect()).collect();
        let degree = adj.iter().map(|r| r.iter().map(|x| x.1).sum::<f64>().max(1e-12)).collect();
        Self { ids, adj, degree }
    }

    /// y ← D^{-1/2} W D^{-1/2} x
    fn normalized_product(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            x.len(),
            self.adj.iter().enumerate().map(|(i, row)| {
                row.iter().map(|&(j, w)| w * x[j] / self.degree[j].sqrt()).sum::<f64>() / self.degree[i].sqrt()
            }),
        )
    }
}

/// Eigenvector of the second smallest eigenvalue of `I − D^{-1/2} W D^{-1/2}`.
fn fiedler(g: &Dense, dense_limit: usize) -> DVector<f64> {
    let n = g.ids.len();
    if n < dense_limit {
        let mut l = DMatrix::<f64>::identity(n, n);
        for (i, row) in g.adj.iter().enumerate() {
            for &(j, w) in row {
                l[(i, j)] -= w / (g.degree[i] * g.degree[j]).sqrt();
            }
        }
        let eig = SymmetricEigen::new(l);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        eig.eigenvectors.column(order[1]).into_owned()
    } else {
        lanczos_fiedler(g)
    }
}

/// Largest eigenvector of the normalized adjacency restricted to the
/// complement of its known top eigenvector `sqrt(d)`, by Lanczos with full
/// reorthogonalization and explicit restarts.
fn lanczos_fiedler(g: &Dense) -> DVector<f64> {
    let n = g.ids.len();
    let mut top = DVector::from_iterator(n, g.degree.iter().map(|d| d.sqrt()));
    top /= top.norm();
    let deflate = |v: &mut DVector<f64>| {
        let c = top.dot(v);
        v.axpy(-c, &top, 1.0);
    };
    // deterministic start vector that is not orthogonal to smooth modes
    let mut start = DVector::from_iterator(n, (0..n).map(|i| 1.0 + (i as f64 * 0.618_033_988_75).fract()));
    let steps = n.min(120);
    let mut ritz = start.clone();
    for _restart in 0..50 {
        deflate(&mut start);
        let norm = start.norm();
        if norm == 0.0 {
            break;
        }
        let mut basis: Vec<DVector<f64>> = vec![start / norm];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        for j in 0..steps {
            let mut w = g.normalized_product(&basis[j]);
            deflate(&mut w);
            alpha.push(basis[j].dot(&w));
            for _ in 0..2 {
                for q in &basis {
                    let c = q.dot(&w);
                    w.axpy(-c, q, 1.0);
                }
            }
            let b = w.norm();
            if b < 1e-12 || j + 1 == steps {
                break;
            }
            beta.push(b);
            basis.push(w / b);
        }
        let m = alpha.len();
        let mut t = DMatrix::<f64>::zeros(m, m);
        for i in 0..m {
            t[(i, i)] = alpha[i];
            if i + 1 < m {
                t[(i, i + 1)] = beta[i];
                t[(i + 1, i)] = beta[i];
            }
        }
        let eig = SymmetricEigen::new(t);
        let k = (0..m).max_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b])).unwrap();
        let s = eig.eigenvectors.column(k);
        ritz = DVector::zeros(n);
        for (i, q) in basis.iter().take(m).enumerate() {
            ritz.axpy(s[i], q, 1.0);
        }
        ritz /= ritz.norm();
        let mut residual = g.normalized_product(&ritz);
        deflate(&mut residual);
        residual.axpy(-eig.eigenvalues[k], &ritz, 1.0);
        if residual.norm() < EIGEN_TOLERANCE {
            break;
        }
        start = ritz.clone();
    }
    ritz
}

/// Sweep over every gap of the sorted `D^{-1/2}·u` embedding; smallest Ncut
/// wins, ties keep the smaller prefix.
fn bisect(graph: &MatchGraph, dense_limit: usize) -> (BTreeSet<ImageId>, BTreeSet<ImageId>) {
    let g = Dense::new(graph);
    let n = g.ids.len();
    let u = fiedler(&g, dense_limit);
    let y: Vec<f64> = (0..n).map(|i| u[i] / g.degree[i].sqrt()).collect();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| y[a].total_cmp(&y[b]).then(a.cmp(&b)));

    let total: f64 = g.degree.iter().sum();
    let mut in_a = vec![false; n];
    let (mut cut, mut assoc_a) = (0.0, 0.0);
    let mut best = (f64::INFINITY, 1usize);
    for k in 1..n {
        let v = order[k - 1];
        let to_a: f64 = g.adj[v].iter().filter(|(j, _)| in_a[*j]).map(|x| x.1).sum();
        cut += g.degree[v] - 2.0 * to_a;
        assoc_a += g.degree[v];
        in_a[v] = true;
        let assoc_b = total - assoc_a;
        let value = if assoc_a > 0.0 && assoc_b > 0.0 { cut / assoc_a + cut / assoc_b } else { f64::INFINITY };
        if value < best.0 {
            best = (value, k);
        }
    }
    let a: BTreeSet<ImageId> = order[..best.1].iter().map(|&i| g.ids[i]).collect();
    let b: BTreeSet<ImageId> = order[best.1..].iter().map(|&i| g.ids[i]).collect();
    (a, b)
}
