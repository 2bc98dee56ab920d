//! Small scene builder shared by unit tests.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::SceneData;
use crate::geometry::project;
use crate::matchgraph::{FeatureSet, ImageMeta, Keypoint, MatchPair, MatchStore};
use crate::{ImageId, Intrinsics, Point3, Pose};

pub(crate) fn intrinsics() -> Intrinsics {
    Intrinsics::simple(700.0, 500.0, 375.0, 1000, 750).unwrap()
}

/// Projects every point into every camera; visible projections become
/// keypoints (index order = point order) and shared points become matches.
pub(crate) fn scene_from(cameras: &BTreeMap<ImageId, Pose>, points: &[Point3], noise_px: f64, seed: u64) -> (SceneData, BTreeMap<ImageId, Vec<Option<usize>>>) {
    let k = intrinsics();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_px.max(1e-300)).unwrap();
    let mut scene = SceneData::default();
    // per image: point index → keypoint index
    let mut kp_of: BTreeMap<ImageId, Vec<Option<usize>>> = BTreeMap::new();
    for (&id, pose) in cameras {
        let mut f = FeatureSet::new(id);
        let mut map = vec![None; points.len()];
        for (pi, x) in points.iter().enumerate() {
            let Ok(p) = project(&k, pose, x) else { continue };
            if !(0.0..1000.0).contains(&p.x) || !(0.0..750.0).contains(&p.y) {
                continue;
            }
            let (dx, dy) = if noise_px > 0.0 { (noise.sample(&mut rng), noise.sample(&mut rng)) } else { (0.0, 0.0) };
            map[pi] = Some(f.keypoints.len());
            f.keypoints.push(Keypoint { x: p.x + dx, y: p.y + dy, scale: 1.0 });
        }
        scene.metas.insert(id, ImageMeta::new(id, 1000, 750));
        scene.intrinsics.insert(id, k);
        scene.features.insert(id, f);
        kp_of.insert(id, map);
    }
    let ids: Vec<ImageId> = cameras.keys().copied().collect();
    let mut store = MatchStore::default();
    for (x, &a) in ids.iter().enumerate() {
        for &b in &ids[x + 1..] {
            let m: Vec<(usize, usize)> =
                (0..points.len()).filter_map(|p| Some((kp_of[&a][p]?, kp_of[&b][p]?))).collect();
            if m.len() >= 16 {
                store.insert(MatchPair::new(a, b, m).unwrap());
            }
        }
    }
    scene.matches = store;
    (scene, kp_of)
}
