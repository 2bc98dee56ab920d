use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;

use super::{
    build_correspondence_graph, find_common_points, ransac_similarity, strategy_counts, CommonPair, CommonPointSet,
    SimilarityRansacOptions, StrategyCounts,
};
use crate::geometry::ba::{BaOptions, BaReport};
use crate::matchgraph::MatchStore;
use crate::sfm::{bundle_adjust, filter_observations, Observation, Reconstruction, ScenePoint};
use crate::{ImageId, PointId, Similarity};

#[derive(Debug, Clone)]
pub struct MergeOptions {
    pub ransac: SimilarityRansacOptions,
    /// Observations above this error are removed before the final adjustment.
    pub max_error_px: f64,
    pub final_ba_iterations: usize,
    pub final_ba: bool,
}

impl Default for MergeOptions {
    fn default() -> Self {
        Self { ransac: SimilarityRansacOptions::default(), max_error_px: 4.0, final_ba_iterations: 50, final_ba: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MergeStep {
    /// Index into the cluster list.
    pub cluster: usize,
    pub common_points: usize,
    pub inliers: usize,
    pub inlier_ratio: f64,
    pub mse: f64,
    pub scale: f64,
    /// The cluster had more images than the model and served as reference.
    pub swapped: bool,
    pub loaded: StrategyCounts,
    pub loaded_feature_matches: usize,
    pub cameras_added: usize,
    pub points_added: usize,
    pub points_fused: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MergeReport {
    pub steps: Vec<MergeStep>,
    /// `(cluster, reason)` for every failed alignment attempt.
    pub failed_attempts: Vec<(usize, String)>,
    pub dropped: Vec<usize>,
    /// Images only present in dropped clusters.
    pub dropped_images: Vec<ImageId>,
    pub outliers_removed: usize,
    pub mean_error_before_final_ba: f64,
    pub mean_error_after_final_ba: f64,
    pub final_ba: Option<BaReport>,
}

/// Common points of `cluster` against `model`, oriented cluster → model, with
/// the smaller reconstruction acting as the source.
struct Candidate {
    common: CommonPointSet,
    swapped: bool,
    loaded: StrategyCounts,
    loaded_feature_matches: usize,
}

fn candidate(cluster: &Reconstruction, model: &Reconstruction, store: &MatchStore) -> Candidate {
    let swapped = cluster.camera_count() > model.camera_count();
    let (source, reference) = if swapped { (model, cluster) } else { (cluster, model) };
    let cg = build_correspondence_graph(source, reference, store);
    let loaded = strategy_counts(store, &source.images(), &reference.images());
    let common = find_common_points(&cg, source, reference);
    Candidate { common, swapped, loaded, loaded_feature_matches: cg.loaded_feature_matches }
}

/// Maps the cluster into the model frame and fuses it.
///
/// Cameras already in the model keep their model pose. Each inlier pair adds
/// the cluster observations to the model point, whose position is kept; other
/// cluster points are appended under fresh ids. Observations whose feature is
/// already used by another model point are skipped, and points left with fewer
/// than two observations are not added.
pub fn merge_pair(model: &Reconstruction, cluster: &Reconstruction, t: &Similarity, inliers: &[CommonPair]) -> Reconstruction {
    let mut out = model.clone();
    for &img in &cluster.registered_order {
        if !out.is_registered(img) {
            let c = &cluster.cameras[&img];
            out.register(img, c.intrinsics, t.transform_pose(&c.pose));
        }
    }
    let mut used: HashMap<(ImageId, usize), PointId> = out.keypoint_index();
    let fuse: BTreeMap<PointId, PointId> = inliers.iter().map(|p| (p.source, p.reference)).collect();
    for (cid, cp) in &cluster.points {
        if let Some(&gid) = fuse.get(cid) {
            let mut extra = Vec::new();
            {
                let gp = &out.points[&gid];
                for o in &cp.observations {
                    let free = used.get(&(o.image_id, o.keypoint)).is_none_or(|&p| p == gid);
                    if free && gp.observation_in(o.image_id).is_none() {
                        extra.push(*o);
                    }
                }
            }
            let gp = out.points.get_mut(&gid).unwrap();
            for o in extra {
                used.insert((o.image_id, o.keypoint), gid);
                gp.observations.push(o);
            }
            gp.observations.sort_by_key(|o| o.image_id);
        } else {
            let obs: Vec<Observation> =
                cp.observations.iter().copied().filter(|o| !used.contains_key(&(o.image_id, o.keypoint))).collect();
            if obs.len() < 2 {
                continue;
            }
            let id = out.next_point_id();
            for o in &obs {
                used.insert((o.image_id, o.keypoint), id);
            }
            out.insert_point(id, ScenePoint { position: t.apply(&cp.position), observations: obs });
        }
    }
    out
}

/// Merges clusters into the model, largest common-point count first (ties:
/// lowest index). A cluster that fails alignment is retried after another
/// merge succeeds and dropped once a full pass over the remaining ones fails.
/// Ends with outlier removal and one global bundle adjustment.
pub fn merge_all(
    model: Reconstruction,
    clusters: &[Reconstruction],
    store: &MatchStore,
    opts: &MergeOptions,
) -> (Reconstruction, MergeReport) {
    let mut model = model;
    let mut report = MergeReport::default();
    let mut remaining: BTreeSet<usize> = (0..clusters.len()).filter(|&i| clusters[i].camera_count() > 0).collect();
    let mut failed: BTreeSet<usize> = BTreeSet::new();
    while !remaining.is_empty() {
        let open: Vec<usize> = remaining.difference(&failed).copied().collect();
        if open.is_empty() {
            break;
        }
        // counting runs against a frozen snapshot of the model
        let cands: Vec<(usize, Candidate)> =
            open.par_iter().map(|&i| (i, candidate(&clusters[i], &model, store))).collect();
        let (idx, cand) = cands
            .into_iter()
            .fold(None, |best: Option<(usize, Candidate)>, (i, c)| match &best {
                Some((_, b)) if b.common.len() >= c.common.len() => best,
                _ => Some((i, c)),
            })
            .unwrap();
        let cluster = &clusters[idx];
        let (source, reference) = if cand.swapped { (&model, cluster) } else { (cluster, &model) };
        let ropts = SimilarityRansacOptions { seed: opts.ransac.seed ^ idx as u64, ..opts.ransac };
        match ransac_similarity(&cand.common, source, reference, &ropts) {
            Ok(fit) => {
                let mut inliers: Vec<CommonPair> =
                    cand.common.pairs.iter().zip(&fit.inliers).filter(|(_, &ok)| ok).map(|(p, _)| *p).collect();
                let t = if cand.swapped {
                    for p in inliers.iter_mut() {
                        *p = CommonPair { source: p.reference, reference: p.source, m: p.l, l: p.m, ..*p };
                    }
                    fit.transform.inverse()
                } else {
                    fit.transform
                };
                let before = (model.camera_count(), model.point_count());
                model = merge_pair(&model, cluster, &t, &inliers);
                info!(
                    "merged cluster {idx}: {} common, {} inliers, {} cameras",
                    cand.common.len(),
                    fit.inlier_count,
                    model.camera_count()
                );
                report.steps.push(MergeStep {
                    cluster: idx,
                    common_points: cand.common.len(),
                    inliers: fit.inlier_count,
                    inlier_ratio: fit.inlier_ratio(),
                    mse: fit.mse,
                    scale: t.scale,
                    swapped: cand.swapped,
                    loaded: cand.loaded,
                    loaded_feature_matches: cand.loaded_feature_matches,
                    cameras_added: model.camera_count() - before.0,
                    points_added: model.point_count() - before.1,
                    points_fused: inliers.len(),
                });
                remaining.remove(&idx);
                failed.clear();
            }
            Err(e) => {
                warn!("cluster {idx} not merged yet: {e}");
                report.failed_attempts.push((idx, e.to_string()));
                failed.insert(idx);
            }
        }
    }
    report.dropped = remaining.into_iter().collect();
    let present = model.images();
    let mut lost = BTreeSet::new();
    for &i in &report.dropped {
        lost.extend(clusters[i].images().into_iter().filter(|img| !present.contains(img)));
    }
    report.dropped_images = lost.into_iter().collect();

    report.outliers_removed = filter_observations(&mut model, opts.max_error_px);
    report.mean_error_before_final_ba = model.mean_reprojection_error();
    if opts.final_ba {
        let ba = bundle_adjust(&mut model, &BaOptions::default().with_max_iterations(opts.final_ba_iterations));
        report.final_ba = Some(ba);
    }
    report.mean_error_after_final_ba = model.mean_reprojection_error();
    (model, report)
}
