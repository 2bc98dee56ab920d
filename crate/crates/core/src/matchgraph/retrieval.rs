use std::collections::{BTreeMap, BTreeSet};

use rayon::prelude::*;

use super::{FeatureSet, VocabularyTree};
use crate::ImageId;

/// L2-normalized TF-IDF word vectors, one per image with descriptors.
#[derive(Debug, Clone, Default)]
pub struct RetrievalIndex {
    vectors: BTreeMap<ImageId, Vec<(usize, f64)>>,
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut s) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                s += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    s
}

impl RetrievalIndex {
    /// Indexes each image by its `index_features` largest-scale descriptors.
    pub fn build(features: &BTreeMap<ImageId, FeatureSet>, vocab: &VocabularyTree, index_features: usize) -> Self {
        let usable: Vec<&FeatureSet> =
            features.values().filter(|f| f.has_descriptors() && f.dim == vocab.dim() && !f.is_empty()).collect();
        let counts: Vec<BTreeMap<usize, usize>> = usable
            .par_iter()
            .map(|f| {
                let mut h = BTreeMap::new();
                for i in f.top_scale(index_features) {
                    *h.entry(vocab.quantize(f.descriptor(i))).or_insert(0) += 1;
                }
                h
            })
            .collect();
        let mut doc_freq: BTreeMap<usize, usize> = BTreeMap::new();
        for h in &counts {
            for &w in h.keys() {
                *doc_freq.entry(w).or_insert(0) += 1;
            }
        }
        let n = usable.len() as f64;
        let mut vectors = BTreeMap::new();
        for (f, h) in usable.iter().zip(counts) {
            let total: usize = h.values().sum();
            let mut v: Vec<(usize, f64)> = h
                .iter()
                .map(|(&w, &c)| (w, c as f64 / total as f64 * (n / doc_freq[&w] as f64).ln()))
                .collect();
            let norm = v.iter().map(|x| x.1 * x.1).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| x.1 /= norm);
            }
            vectors.insert(f.image_id, v);
        }
        Self { vectors }
    }

    pub fn images(&self) -> impl Iterator<Item = ImageId> + '_ {
        self.vectors.keys().copied()
    }

    /// Cosine similarity; zero when either image is not indexed.
    pub fn similarity(&self, a: ImageId, b: ImageId) -> f64 {
        match (self.vectors.get(&a), self.vectors.get(&b)) {
            (Some(x), Some(y)) => sparse_dot(x, y),
            _ => 0.0,
        }
    }
}

/// Other indexed images ordered by decreasing similarity to `query`; ties by id.
pub fn rank_similar_images(index: &RetrievalIndex, query: ImageId) -> Vec<(ImageId, f64)> {
    let mut ranked: Vec<(ImageId, f64)> =
        index.images().filter(|&o| o != query).map(|o| (o, index.similarity(query, o))).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked
}

/// Unordered candidate pairs formed by each image and its `top_k` best matches.
pub fn retrieve_pairs(
    features: &BTreeMap<ImageId, FeatureSet>,
    vocab: &VocabularyTree,
    index_features: usize,
    top_k: usize,
) -> Vec<(ImageId, ImageId)> {
    let index = RetrievalIndex::build(features, vocab, index_features);
    let ids: Vec<ImageId> = index.images().collect();
    let per_image: Vec<Vec<(ImageId, ImageId)>> = ids
        .par_iter()
        .map(|&q| {
            rank_similar_images(&index, q)
                .into_iter()
                .take(top_k)
                .map(|(o, _)| (q.min(o), q.max(o)))
                .collect()
        })
        .collect();
    let set: BTreeSet<(ImageId, ImageId)> = per_image.into_iter().flatten().collect();
    set.into_iter().collect()
}
