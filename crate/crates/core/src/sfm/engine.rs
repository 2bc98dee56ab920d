use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::{debug, warn};

use super::{bundle_adjust, build_tracks, filter_observations, local_bundle_adjust, Observation, Reconstruction, SfmError, Track};
use crate::geometry::ba::{BaOptions, BaReport};
use crate::geometry::{
    angle_between, estimate_relative_pose, resect_camera, triangulate, triangulate_unchecked, ResectionOptions,
    Sighting, TwoViewOptions,
};
use crate::matchgraph::{FeatureSet, ImageMeta, MatchPair, MatchStore};
use crate::{ImageId, Intrinsics, PointId, Pose};

#[derive(Debug, Clone)]
pub struct EngineOptions {
    pub min_tri_angle_deg: f64,
    /// Median triangulation angle a seed pair must reach.
    pub seed_min_angle_deg: f64,
    /// RANSAC threshold for two-view estimation and resection.
    pub threshold_px: f64,
    /// Observations above this error are pruned.
    pub max_error_px: f64,
    pub min_resection_corrs: usize,
    pub growth_ratio: f64,
    pub max_registration_attempts: usize,
    pub local_ba_iterations: usize,
    pub global_ba_iterations: usize,
    pub max_seed_candidates: usize,
    pub seed: u64,
}

impl Default for EngineOptions {
    fn default() -> Self {
        Self {
            min_tri_angle_deg: 2.0,
            seed_min_angle_deg: 4.0,
            threshold_px: 4.0,
            max_error_px: 4.0,
            min_resection_corrs: 15,
            growth_ratio: 1.1,
            max_registration_attempts: 3,
            local_ba_iterations: 10,
            global_ba_iterations: 30,
            max_seed_candidates: 20,
            seed: 0,
        }
    }
}

/// Images, calibration, features and verified matches shared by every run.
#[derive(Debug, Clone, Default)]
pub struct SceneData {
    pub metas: BTreeMap<ImageId, ImageMeta>,
    pub intrinsics: BTreeMap<ImageId, Intrinsics>,
    pub features: BTreeMap<ImageId, FeatureSet>,
    pub matches: MatchStore,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SeedChoice {
    pub pair: (ImageId, ImageId),
    /// Pose of the second image with the first at the origin.
    pub relative: Pose,
    pub median_angle_deg: f64,
    pub inliers: usize,
    /// No candidate reached the angle requirement.
    pub fallback: bool,
}

#[derive(Debug, Clone)]
pub struct EngineResult {
    pub reconstruction: Reconstruction,
    pub seed: SeedChoice,
    pub unregistered: Vec<ImageId>,
    pub global_adjustments: usize,
    pub final_report: BaReport,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn two_view(pair: &MatchPair, scene: &SceneData, opts: &EngineOptions) -> Option<(Pose, f64, usize)> {
    let (fa, fb) = (scene.features.get(&pair.image_a)?, scene.features.get(&pair.image_b)?);
    let (ka, kb) = (scene.intrinsics.get(&pair.image_a)?, scene.intrinsics.get(&pair.image_b)?);
    let pixels: Vec<_> = pair.matches.iter().map(|&(i, j)| (fa.pixel(i), fb.pixel(j))).collect();
    let tv = TwoViewOptions {
        threshold_px: opts.threshold_px,
        seed: opts.seed ^ ((pair.image_a as u64) << 32 | pair.image_b as u64),
        ..Default::default()
    };
    let rel = estimate_relative_pose(&pixels, ka, kb, &tv).ok()?;
    let first = Pose::identity();
    let (ca, cb) = (first.center(), rel.pose.center());
    let mut angles = Vec::new();
    for (m, &ok) in pixels.iter().zip(&rel.inliers) {
        if !ok {
            continue;
        }
        let s = [Sighting::new(*ka, first, m.0), Sighting::new(*kb, rel.pose, m.1)];
        if let Ok(x) = triangulate_unchecked(&s) {
            if first.transform(&x).z > 0.0 && rel.pose.transform(&x).z > 0.0 {
                angles.push(angle_between(&(ca - x), &(cb - x)).to_degrees());
            }
        }
    }
    if angles.len() < opts.min_resection_corrs.max(8) {
        return None;
    }
    Some((rel.pose, median(angles), rel.inlier_count))
}

/// First pair, by decreasing inlier count, whose two-view model has a median
/// triangulation angle of at least `seed_min_angle_deg`. Otherwise the best
/// pair that yields any model, flagged as a fallback.
pub fn select_seed_pair(pairs: &[&MatchPair], scene: &SceneData, opts: &EngineOptions) -> Result<SeedChoice, SfmError> {
    if pairs.is_empty() {
        return Err(SfmError::NoPairs);
    }
    let mut ranked: Vec<&MatchPair> = pairs.to_vec();
    ranked.sort_by(|a, b| b.inlier_count.cmp(&a.inlier_count).then(a.key().cmp(&b.key())));
    let mut fallback: Option<SeedChoice> = None;
    for p in ranked.iter().take(opts.max_seed_candidates.max(1)) {
        let Some((relative, angle, inliers)) = two_view(p, scene, opts) else { continue };
        let choice = SeedChoice { pair: p.key(), relative, median_angle_deg: angle, inliers, fallback: false };
        if angle >= opts.seed_min_angle_deg {
            return Ok(choice);
        }
        if fallback.is_none() {
            fallback = Some(SeedChoice { fallback: true, ..choice });
        }
    }
    match fallback {
        Some(f) => {
            warn!("no seed pair reaches {}°; falling back to {:?}", opts.seed_min_angle_deg, f.pair);
            Ok(f)
        }
        None => Err(SfmError::SeedFailed),
    }
}

/// Images of the largest connected piece of the pair graph (ties: lowest id).
fn largest_component(pairs: &[&MatchPair]) -> BTreeSet<ImageId> {
    let mut adj: BTreeMap<ImageId, Vec<ImageId>> = BTreeMap::new();
    for p in pairs {
        adj.entry(p.image_a).or_default().push(p.image_b);
        adj.entry(p.image_b).or_default().push(p.image_a);
    }
    let mut seen = BTreeSet::new();
    let mut best = BTreeSet::new();
    for &s in adj.keys() {
        if seen.contains(&s) {
            continue;
        }
        let mut comp = BTreeSet::from([s]);
        let mut stack = vec![s];
        seen.insert(s);
        while let Some(v) = stack.pop() {
            for &u in &adj[&v] {
                if seen.insert(u) {
                    comp.insert(u);
                    stack.push(u);
                }
            }
        }
        if comp.len() > best.len() {
            best = comp;
        }
    }
    best
}

struct State<'a> {
    scene: &'a SceneData,
    opts: &'a EngineOptions,
    recon: Reconstruction,
    tracks: Vec<Track>,
    track_of: HashMap<(ImageId, usize), usize>,
    point_of: Vec<Option<PointId>>,
    track_of_point: BTreeMap<PointId, usize>,
}

impl<'a> State<'a> {
    fn pixel(&self, image: ImageId, kp: usize) -> crate::Vec2 {
        self.scene.features[&image].pixel(kp)
    }

    fn sync_points(&mut self) {
        let recon = &self.recon;
        self.track_of_point.retain(|pid, _| recon.points.contains_key(pid));
        for p in self.point_of.iter_mut() {
            if p.is_some_and(|id| !recon.points.contains_key(&id)) {
                *p = None;
            }
        }
    }

    /// Triangulates tracks without a point that have two or more registered views.
    fn triangulate_tracks(&mut self, only: Option<ImageId>) -> usize {
        let min_angle = self.opts.min_tri_angle_deg.to_radians();
        let candidates: Vec<usize> = match only {
            Some(img) => {
                let mut v: Vec<usize> =
                    self.track_of.iter().filter(|((i, _), _)| *i == img).map(|(_, &t)| t).collect();
                v.sort_unstable();
                v
            }
            None => (0..self.tracks.len()).collect(),
        };
        let mut created = 0;
        for t in candidates {
            if self.point_of[t].is_some() {
                continue;
            }
            let obs: Vec<(ImageId, usize)> =
                self.tracks[t].observations.iter().copied().filter(|(i, _)| self.recon.is_registered(*i)).collect();
            if obs.len() < 2 {
                continue;
            }
            let sightings: Vec<Sighting<f64>> = obs
                .iter()
                .map(|&(i, k)| {
                    let c = &self.recon.cameras[&i];
                    Sighting::new(c.intrinsics, c.pose, self.pixel(i, k))
                })
                .collect();
            let Ok(x) = triangulate(&sightings, min_angle) else { continue };
            let kept: Vec<Observation> = obs
                .iter()
                .zip(&sightings)
                .filter(|(_, s)| {
                    crate::geometry::project(&s.intrinsics, &s.pose, &x)
                        .is_ok_and(|p| (p - s.pixel).norm() <= self.opts.max_error_px)
                })
                .map(|(&(i, k), s)| Observation { image_id: i, keypoint: k, pixel: s.pixel })
                .collect();
            if kept.len() < 2 {
                continue;
            }
            let pid = self.recon.add_point(x, kept);
            self.point_of[t] = Some(pid);
            self.track_of_point.insert(pid, t);
            created += 1;
        }
        created
    }

    /// Adds registered views of existing tracks that reproject within the error bound.
    fn extend_tracks(&mut self) -> usize {
        let mut added = 0;
        let entries: Vec<(PointId, usize)> = self.track_of_point.iter().map(|(&p, &t)| (p, t)).collect();
        for (pid, t) in entries {
            let missing: Vec<(ImageId, usize)> = {
                let p = &self.recon.points[&pid];
                self.tracks[t]
                    .observations
                    .iter()
                    .copied()
                    .filter(|(i, _)| self.recon.is_registered(*i) && p.observation_in(*i).is_none())
                    .collect()
            };
            for (i, k) in missing {
                let o = Observation { image_id: i, keypoint: k, pixel: self.pixel(i, k) };
                let p = &self.recon.points[&pid];
                if self.recon.observation_error(p, &o).is_some_and(|e| e <= self.opts.max_error_px) {
                    let p = self.recon.points.get_mut(&pid).unwrap();
                    p.observations.push(o);
                    p.observations.sort_by_key(|o| o.image_id);
                    added += 1;
                }
            }
        }
        added
    }

    fn global_adjust(&mut self) -> BaReport {
        let opts = BaOptions::default().with_max_iterations(self.opts.global_ba_iterations);
        let report = bundle_adjust(&mut self.recon, &opts);
        filter_observations(&mut self.recon, self.opts.max_error_px);
        self.sync_points();
        self.extend_tracks();
        self.triangulate_tracks(None);
        report
    }

    /// Unregistered subset images ranked by visible triangulated tracks.
    fn visible_counts(&self, subset: &BTreeSet<ImageId>) -> BTreeMap<ImageId, usize> {
        let mut counts = BTreeMap::new();
        for &t in self.track_of_point.values() {
            for &(i, _) in &self.tracks[t].observations {
                if subset.contains(&i) && !self.recon.is_registered(i) {
                    *counts.entry(i).or_insert(0) += 1;
                }
            }
        }
        counts
    }

    fn try_register(&mut self, image: ImageId) -> bool {
        let mut corr = Vec::new();
        let mut pids = Vec::new();
        for (&(i, k), &t) in &self.track_of {
            if i != image {
                continue;
            }
            if let Some(pid) = self.point_of[t] {
                corr.push((k, pid));
            }
        }
        corr.sort_unstable();
        let pairs: Vec<_> = corr
            .iter()
            .map(|&(k, pid)| {
                pids.push((k, pid));
                (self.recon.points[&pid].position, self.pixel(image, k))
            })
            .collect();
        let intr = self.scene.intrinsics[&image];
        let ropts = ResectionOptions { threshold_px: self.opts.threshold_px, seed: self.opts.seed ^ image as u64, ..Default::default() };
        let res = match resect_camera(&pairs, &intr, &ropts) {
            Ok(r) if r.inlier_count >= self.opts.min_resection_corrs => r,
            Ok(r) => {
                debug!("image {image}: only {} resection inliers", r.inlier_count);
                return false;
            }
            Err(e) => {
                debug!("image {image}: resection failed: {e}");
                return false;
            }
        };
        self.recon.register(image, intr, res.pose);
        for ((k, pid), ok) in pids.into_iter().zip(res.inliers) {
            if !ok {
                continue;
            }
            let pixel = self.pixel(image, k);
            let p = self.recon.points.get_mut(&pid).unwrap();
            p.observations.push(Observation { image_id: image, keypoint: k, pixel });
            p.observations.sort_by_key(|o| o.image_id);
        }
        self.triangulate_tracks(Some(image));
        local_bundle_adjust(&mut self.recon, image, self.opts.local_ba_iterations);
        true
    }
}

/// Incremental reconstruction of `subset` from the pairs with both images in it.
pub fn incremental_reconstruct(
    subset: &BTreeSet<ImageId>,
    scene: &SceneData,
    opts: &EngineOptions,
) -> Result<EngineResult, SfmError> {
    if subset.is_empty() {
        return Err(SfmError::EmptySubset);
    }
    for &i in subset {
        if !scene.intrinsics.contains_key(&i) || !scene.features.contains_key(&i) {
            return Err(SfmError::MissingImage(i));
        }
    }
    let pairs: Vec<&MatchPair> = scene.matches.within(subset).collect();
    let main = largest_component(&pairs);
    let seed_pairs: Vec<&MatchPair> = pairs.iter().copied().filter(|p| main.contains(&p.image_a)).collect();
    let seed = select_seed_pair(&seed_pairs, scene, opts)?;

    let tracks = build_tracks(pairs.iter().copied());
    let mut track_of = HashMap::new();
    for (t, tr) in tracks.iter().enumerate() {
        for &o in &tr.observations {
            track_of.insert(o, t);
        }
    }
    let n_tracks = tracks.len();
    let mut st = State {
        scene,
        opts,
        recon: Reconstruction::new(0),
        tracks,
        track_of,
        point_of: vec![None; n_tracks],
        track_of_point: BTreeMap::new(),
    };
    let (a, b) = seed.pair;
    st.recon.register(a, scene.intrinsics[&a], Pose::identity());
    st.recon.register(b, scene.intrinsics[&b], seed.relative);
    st.triangulate_tracks(None);
    if st.recon.point_count() == 0 {
        return Err(SfmError::SeedFailed);
    }
    st.global_adjust();
    let mut global_adjustments = 1;
    let mut last_global = 2usize;

    let mut failures: BTreeMap<ImageId, (usize, usize)> = BTreeMap::new();
    loop {
        let counts = st.visible_counts(subset);
        let mut ranked: Vec<(ImageId, usize)> = counts
            .into_iter()
            .filter(|&(i, c)| {
                c >= opts.min_resection_corrs
                    && failures.get(&i).is_none_or(|&(n, at)| n < opts.max_registration_attempts && c > at)
            })
            .collect();
        ranked.sort_by(|x, y| y.1.cmp(&x.1).then(x.0.cmp(&y.0)));
        let Some(&(next, visible)) = ranked.first() else { break };
        if !st.try_register(next) {
            let e = failures.entry(next).or_insert((0, 0));
            *e = (e.0 + 1, visible);
            continue;
        }
        let registered = st.recon.camera_count();
        if registered as f64 >= opts.growth_ratio * last_global as f64 {
            st.global_adjust();
            global_adjustments += 1;
            last_global = registered;
        }
    }

    let final_report = st.global_adjust();
    global_adjustments += 1;
    // a last pass when pruning or completion changed the observation set
    let final_report = if st.recon.mean_reprojection_error() > final_report.final_mean_error + 1e-12 {
        global_adjustments += 1;
        let r = bundle_adjust(&mut st.recon, &BaOptions::default().with_max_iterations(opts.global_ba_iterations));
        filter_observations(&mut st.recon, opts.max_error_px);
        r
    } else {
        final_report
    };
    let unregistered = subset.iter().copied().filter(|i| !st.recon.is_registered(*i)).collect();
    Ok(EngineResult { reconstruction: st.recon, seed, unregistered, global_adjustments, final_report })
}
