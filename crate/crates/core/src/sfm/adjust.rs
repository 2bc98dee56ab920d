use std::collections::{BTreeMap, BTreeSet};

use super::Reconstruction;
use crate::geometry::ba::{solve, BaCamera, BaObservation, BaOptions, BaPoint, BaProblem, BaReport};
use crate::{ImageId, PointId};

struct Mapping {
    cameras: Vec<ImageId>,
    points: Vec<PointId>,
}

fn assemble(
    recon: &Reconstruction,
    cameras: &[ImageId],
    free_cameras: &BTreeSet<ImageId>,
    points: &[PointId],
    fixed_points: &BTreeSet<PointId>,
) -> (BaProblem<f64>, Mapping) {
    let cam_index: BTreeMap<ImageId, usize> = cameras.iter().enumerate().map(|(i, &c)| (c, i)).collect();
    let mut problem = BaProblem::default();
    for &c in cameras {
        let e = &recon.cameras[&c];
        problem.cameras.push(if free_cameras.contains(&c) {
            BaCamera::free(e.intrinsics, e.pose)
        } else {
            BaCamera::fixed(e.intrinsics, e.pose)
        });
    }
    for (pi, &pid) in points.iter().enumerate() {
        let p = &recon.points[&pid];
        problem.points.push(BaPoint { position: p.position, fixed: fixed_points.contains(&pid) });
        for o in &p.observations {
            if let Some(&ci) = cam_index.get(&o.image_id) {
                problem.observations.push(BaObservation { camera: ci, point: pi, pixel: o.pixel });
            }
        }
    }
    (problem, Mapping { cameras: cameras.to_vec(), points: points.to_vec() })
}

fn write_back(recon: &mut Reconstruction, problem: &BaProblem<f64>, map: &Mapping) {
    for (c, id) in problem.cameras.iter().zip(&map.cameras) {
        recon.cameras.get_mut(id).unwrap().pose = c.pose;
    }
    for (p, id) in problem.points.iter().zip(&map.points) {
        recon.points.get_mut(id).unwrap().position = p.position;
    }
}

/// Full bundle adjustment with fixed intrinsics.
///
/// Without fixed points the gauge is held by the first registered camera (or
/// the first one listed in `fixed_image_ids`) plus the translation component of
/// the next camera that is most sensitive to a change of scale.
pub fn bundle_adjust(recon: &mut Reconstruction, opts: &BaOptions) -> BaReport {
    let fixed_points = opts.fixed_point_ids.clone().unwrap_or_default();
    let cameras = recon.registered_order.clone();
    let mut free: BTreeSet<ImageId> =
        cameras.iter().copied().filter(|c| !opts.fixed_image_ids.contains(c)).collect();
    let points: Vec<PointId> = recon.points.keys().copied().collect();

    let mut scale_lock: Option<(ImageId, usize)> = None;
    let fixed_count = cameras.len() - free.len();
    if opts.fix_gauge && fixed_points.is_empty() && fixed_count < 2 && !cameras.is_empty() {
        let anchor = cameras.iter().copied().find(|c| !free.contains(c)).unwrap_or(cameras[0]);
        free.remove(&anchor);
        if let Some(&second) = cameras.iter().find(|c| free.contains(c)) {
            let a = &recon.cameras[&anchor].pose;
            let b = &recon.cameras[&second].pose;
            // scaling about the anchor moves t_b along R_b·(c_a − c_b)
            let dir = b.rotation * (a.center() - b.center());
            let k = dir.iamax();
            scale_lock = Some((second, k));
        }
    }

    let (mut problem, map) = assemble(recon, &cameras, &free, &points, &fixed_points);
    if let Some((cam, k)) = scale_lock {
        let i = map.cameras.iter().position(|&c| c == cam).unwrap();
        problem.cameras[i].free[3 + k] = false;
    }
    let report = solve(&mut problem, opts);
    write_back(recon, &problem, &map);
    report
}

/// Adjusts one camera and the points it observes; every other camera stays fixed.
pub fn local_bundle_adjust(recon: &mut Reconstruction, image: ImageId, max_iterations: usize) -> BaReport {
    let points: Vec<PointId> = recon
        .points
        .iter()
        .filter(|(_, p)| p.observation_in(image).is_some())
        .map(|(&id, _)| id)
        .collect();
    let mut cams: BTreeSet<ImageId> = BTreeSet::new();
    for id in &points {
        cams.extend(recon.points[id].observations.iter().map(|o| o.image_id));
    }
    let cameras: Vec<ImageId> = cams.into_iter().collect();
    let free = BTreeSet::from([image]);
    let (mut problem, map) = assemble(recon, &cameras, &free, &points, &BTreeSet::new());
    let report = solve(&mut problem, &BaOptions::default().with_max_iterations(max_iterations));
    write_back(recon, &problem, &map);
    report
}

/// Removes observations whose error exceeds `max_error_px` (or that fall behind
/// their camera), then points left with fewer than two observations. Returns
/// the number of observations removed.
pub fn filter_observations(recon: &mut Reconstruction, max_error_px: f64) -> usize {
    let mut removed = 0;
    let ids: Vec<PointId> = recon.points.keys().copied().collect();
    for id in ids {
        let p = &recon.points[&id];
        let keep: Vec<bool> = p
            .observations
            .iter()
            .map(|o| recon.observation_error(p, o).is_some_and(|e| e <= max_error_px))
            .collect();
        let dropped = keep.iter().filter(|k| !**k).count();
        if dropped == 0 {
            continue;
        }
        removed += dropped;
        let p = recon.points.get_mut(&id).unwrap();
        let mut it = keep.iter();
        p.observations.retain(|_| *it.next().unwrap());
        if p.observations.len() < 2 {
            removed += p.observations.len();
            recon.points.remove(&id);
        }
    }
    removed
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, project};
    use crate::sfm::Observation;
    use crate::{Intrinsics, Point3, Pose, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn synthetic(rng: &mut ChaCha8Rng) -> Reconstruction {
        let k = Intrinsics::simple(700.0, 500.0, 375.0, 1000, 750).unwrap();
        let mut r = Reconstruction::new(0);
        for i in 0..6u32 {
            let c = Point3::new(i as f64 * 1.5 - 4.0, 0.3 * i as f64, -10.0);
            let rot = exp_so3(&Vec3::new(rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05), 0.0));
            r.register(i, k, Pose::from_center(rot, &c));
        }
        for _ in 0..150 {
            let x = Point3::new(rng.gen_range(-6.0..6.0), rng.gen_range(-4.0..4.0), rng.gen_range(-1.0..1.0));
            let obs: Vec<Observation> = r
                .cameras
                .iter()
                .enumerate()
                .map(|(kp, (&i, c))| Observation {
                    image_id: i,
                    keypoint: kp,
                    pixel: project(&c.intrinsics, &c.pose, &x).unwrap(),
                })
                .collect();
            r.add_point(x, obs);
        }
        r
    }

    #[test]
    fn gauge_keeps_first_camera_and_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let truth = synthetic(&mut rng);
        let mut r = truth.clone();
        for (i, c) in r.cameras.iter_mut() {
            // the second camera carries the scale lock
            if *i > 1 {
                c.pose.translation += Vec3::new(1e-3, -1e-3, 2e-3);
            }
        }
        for p in r.points.values_mut() {
            p.position += Vec3::new(1e-3, 1e-3, -1e-3);
        }
        let report = bundle_adjust(&mut r, &BaOptions::default());
        assert!(report.final_mean_error < 1e-6, "{report:?}");
        assert_eq!(r.cameras[&0].pose, truth.cameras[&0].pose);
        // with the first camera and the scale pinned the optimum is the truth itself
        for (i, c) in &r.cameras {
            assert!((c.pose.center() - truth.cameras[i].pose.center()).norm() < 1e-6);
        }
    }

    #[test]
    fn local_adjustment_moves_only_its_camera() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let truth = synthetic(&mut rng);
        let mut r = truth.clone();
        r.cameras.get_mut(&3).unwrap().pose.translation += Vec3::new(0.01, 0.0, 0.0);
        let before = r.mean_reprojection_error();
        local_bundle_adjust(&mut r, 3, 20);
        assert!(r.mean_reprojection_error() < before * 1e-3);
        for i in [0, 1, 2, 4, 5] {
            assert_eq!(r.cameras[&i].pose, truth.cameras[&i].pose);
        }
    }

    #[test]
    fn filtering_removes_bad_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut r = synthetic(&mut rng);
        let first = *r.points.keys().next().unwrap();
        r.points.get_mut(&first).unwrap().observations[0].pixel.x += 10.0;
        assert_eq!(filter_observations(&mut r, 4.0), 1);
        assert_eq!(r.points[&first].observations.len(), 5);
        assert_eq!(r.validate(), Ok(()));
    }
}
