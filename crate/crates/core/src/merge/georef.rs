use std::collections::BTreeSet;
use std::fmt;

use serde::Serialize;

use super::MergeError;
use crate::geometry::ba::{BaOptions, BaReport};
use crate::geometry::{triangulate_unchecked, umeyama_similarity, GeometryError, Sighting};
use crate::sfm::{bundle_adjust, Observation, Reconstruction, ScenePoint};
use crate::{ImageId, Point3, Vec2};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GcpRole {
    Control,
    Check,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcpRecord {
    pub id: u32,
    /// Surveyed position.
    pub world: Point3,
    pub observations: Vec<(ImageId, Vec2)>,
    pub role: GcpRole,
}

#[derive(Debug, Clone)]
pub struct GeoreferenceOptions {
    pub ba_iterations: usize,
}

impl Default for GeoreferenceOptions {
    fn default() -> Self {
        Self { ba_iterations: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CheckResidual {
    pub gcp_id: u32,
    /// Absolute coordinate differences, model minus survey.
    pub abs: [f64; 3],
}

/// Check-point residuals with max / mean / std.dev. per axis.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CheckResidualTable {
    pub rows: Vec<CheckResidual>,
    pub max: [f64; 3],
    pub mean: [f64; 3],
    /// Sample standard deviation (n − 1) of the absolute residuals.
    pub std: [f64; 3],
    /// Check points with fewer than two observations in registered images.
    pub skipped: Vec<u32>,
    pub ba: Option<BaReport>,
}

impl CheckResidualTable {
    pub fn from_rows(rows: Vec<CheckResidual>) -> Self {
        let mut t = Self { rows, ..Self::default() };
        let n = t.rows.len();
        if n == 0 {
            return t;
        }
        for axis in 0..3 {
            let v: Vec<f64> = t.rows.iter().map(|r| r.abs[axis]).collect();
            let mean = v.iter().sum::<f64>() / n as f64;
            t.max[axis] = v.iter().cloned().fold(0.0, f64::max);
            t.mean[axis] = mean;
            t.std[axis] = if n > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
        }
        t
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

impl fmt::Display for CheckResidualTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8}{:>10}{:>10}{:>10}", "CP", "|X|", "|Y|", "|Z|")?;
        for r in &self.rows {
            writeln!(f, "{:<8}{:>10.4}{:>10.4}{:>10.4}", r.gcp_id, r.abs[0], r.abs[1], r.abs[2])?;
        }
        writeln!(f)?;
        writeln!(f, "{:<8}{:<30}{:<30}{:<30}", "", "Max (m)", "Mean (m)", "Std.dev. (m)")?;
        write!(f, "{:<8}", "")?;
        for _ in 0..3 {
            write!(f, "{:<10}{:<10}{:<10}", "|X|", "|Y|", "|Z|")?;
        }
        writeln!(f)?;
        write!(f, "{:<8}", "model")?;
        for stat in [&self.max, &self.mean, &self.std] {
            for v in stat {
                write!(f, "{:<10.4}", v)?;
            }
        }
        writeln!(f)
    }
}

fn triangulate_gcp(model: &Reconstruction, gcp: &GcpRecord) -> Option<Point3> {
    let sightings: Vec<Sighting<f64>> = gcp
        .observations
        .iter()
        .filter_map(|(img, px)| model.cameras.get(img).map(|c| Sighting::new(c.intrinsics, c.pose, *px)))
        .collect();
    if sightings.len() < 2 {
        return None;
    }
    triangulate_unchecked(&sightings).ok()
}

/// Moves the model into the survey frame.
///
/// Control points are triangulated, a similarity to their surveyed positions
/// is applied to the whole model, and bundle adjustment then runs with the
/// control points added at their surveyed coordinates and held fixed. Check
/// points are triangulated in the adjusted model and compared to the survey.
pub fn georeference(
    model: &Reconstruction,
    gcps: &[GcpRecord],
    opts: &GeoreferenceOptions,
) -> Result<(Reconstruction, CheckResidualTable), MergeError> {
    let mut src = Vec::new();
    let mut dst = Vec::new();
    let controls: Vec<&GcpRecord> = gcps.iter().filter(|g| g.role == GcpRole::Control).collect();
    for g in &controls {
        if let Some(x) = triangulate_gcp(model, g) {
            src.push(x);
            dst.push(g.world);
        }
    }
    if src.len() < 3 {
        return Err(MergeError::NotEnoughControls(src.len()));
    }
    let t = match umeyama_similarity(&src, &dst) {
        Ok(est) => est.transform,
        Err(e @ GeometryError::Degenerate(_)) => return Err(MergeError::DegenerateControls(e)),
        Err(_) => return Err(MergeError::NotEnoughControls(src.len())),
    };

    let mut out = model.clone();
    for cam in out.cameras.values_mut() {
        cam.pose = t.transform_pose(&cam.pose);
    }
    for p in out.points.values_mut() {
        p.position = t.apply(&p.position);
    }

    // control points join the adjustment under temporary ids
    let mut temp = BTreeSet::new();
    for (i, g) in controls.iter().enumerate() {
        let mut obs: Vec<Observation> = g
            .observations
            .iter()
            .filter(|(img, _)| out.is_registered(*img))
            .map(|&(image_id, pixel)| Observation { image_id, keypoint: usize::MAX - i, pixel })
            .collect();
        obs.sort_by_key(|o| o.image_id);
        obs.dedup_by_key(|o| o.image_id);
        if obs.len() < 2 {
            continue;
        }
        let id = out.next_point_id();
        out.insert_point(id, ScenePoint { position: g.world, observations: obs });
        temp.insert(id);
    }
    let ba_opts = BaOptions { fixed_point_ids: Some(temp.clone()), ..BaOptions::default().with_max_iterations(opts.ba_iterations) };
    let report = bundle_adjust(&mut out, &ba_opts);
    for id in &temp {
        out.points.remove(id);
    }

    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for g in gcps.iter().filter(|g| g.role == GcpRole::Check) {
        match triangulate_gcp(&out, g) {
            Some(x) => {
                let d = x - g.world;
                rows.push(CheckResidual { gcp_id: g.id, abs: [d.x.abs(), d.y.abs(), d.z.abs()] });
            }
            None => skipped.push(g.id),
        }
    }
    let mut table = CheckResidualTable::from_rows(rows);
    table.skipped = skipped;
    table.ba = Some(report);
    Ok((out, table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, project};
    use crate::sfm::CameraEntry;
    use crate::{Intrinsics, Pose, Similarity, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> Intrinsics {
        Intrinsics::simple(800.0, 500.0, 375.0, 1000, 750).unwrap()
    }

    /// Nadir block over a 40×40 m site plus GCPs, returned in survey frame.
    fn survey_scene(rng: &mut ChaCha8Rng, noise: f64) -> (Reconstruction, Vec<GcpRecord>) {
        let mut r = Reconstruction::new(0);
        for i in 0..4 {
            for j in 0..3 {
                let eye = Point3::new(-15.0 + 10.0 * i as f64, -10.0 + 10.0 * j as f64, 40.0);
                let target = Point3::new(eye.x, eye.y, 0.0);
                let pose = Pose::look_at(&eye, &target, &Vec3::y());
                r.register((i * 3 + j) as ImageId, k(), pose);
            }
        }
        let n = Normal::new(0.0, noise.max(1e-300)).unwrap();
        let jitter = |rng: &mut ChaCha8Rng| if noise > 0.0 { Vec2::new(n.sample(rng), n.sample(rng)) } else { Vec2::zeros() };
        for kp in 0..400 {
            let x = Point3::new(rng.gen_range(-20.0..20.0), rng.gen_range(-15.0..15.0), rng.gen_range(0.0..5.0));
            let obs: Vec<Observation> = r
                .cameras
                .iter()
                .filter_map(|(&id, c)| {
                    let p = project(&c.intrinsics, &c.pose, &x).ok()?;
                    ((0.0..1000.0).contains(&p.x) && (0.0..750.0).contains(&p.y))
                        .then(|| Observation { image_id: id, keypoint: kp, pixel: p + jitter(rng) })
                })
                .collect();
            if obs.len() >= 2 {
                r.add_point(x, obs);
            }
        }
        let spots = [(-12.0, -9.0), (12.0, -8.0), (0.0, 10.0), (-5.0, 0.0), (6.0, 3.0), (-14.0, 8.0), (14.0, 9.0)];
        let gcps = spots
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| {
                let world = Point3::new(x, y, 1.0);
                let observations = r
                    .cameras
                    .iter()
                    .filter_map(|(&id, c)| Some((id, project(&c.intrinsics, &c.pose, &world).ok()? + jitter(rng))))
                    .filter(|(_, p)| (0.0..1000.0).contains(&p.x) && (0.0..750.0).contains(&p.y))
                    .collect();
                GcpRecord { id: i as u32 + 1, world, observations, role: if i < 3 { GcpRole::Control } else { GcpRole::Check } }
            })
            .collect();
        (r, gcps)
    }

    fn to_model_frame(r: &Reconstruction) -> Reconstruction {
        let t = Similarity::new(0.05, exp_so3(&Vec3::new(0.3, -0.2, 1.1)), Vec3::new(3.0, -1.0, 0.5)).unwrap();
        let mut m = r.clone();
        for CameraEntry { pose, .. } in m.cameras.values_mut() {
            *pose = t.transform_pose(pose);
        }
        for p in m.points.values_mut() {
            p.position = t.apply(&p.position);
        }
        m
    }

    #[test]
    fn noiseless_check_points_are_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (truth, gcps) = survey_scene(&mut rng, 0.0);
        let model = to_model_frame(&truth);
        let (geo, table) = georeference(&model, &gcps, &GeoreferenceOptions::default()).unwrap();
        assert_eq!(table.rows.len(), 4);
        for r in &table.rows {
            assert!(r.abs.iter().all(|&d| d < 1e-9), "{r:?}");
        }
        assert_eq!(geo.point_count(), model.point_count());
        for (id, c) in &geo.cameras {
            assert!((c.pose.center() - truth.cameras[id].pose.center()).norm() < 1e-8);
        }
    }

    #[test]
    fn noisy_residuals_are_small_and_tabulated() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (truth, gcps) = survey_scene(&mut rng, 0.5);
        let model = to_model_frame(&truth);
        let (_, table) = georeference(&model, &gcps, &GeoreferenceOptions::default()).unwrap();
        // 0.5 px at 40 m with f = 800 is about 2.5 cm on the ground
        for axis in 0..3 {
            assert!(table.max[axis] < 0.5, "{table}");
            assert!(table.mean[axis] <= table.max[axis]);
        }
        let text = table.to_string();
        assert!(text.contains("Max (m)") && text.contains("Mean (m)") && text.contains("Std.dev. (m)"));
        let json: serde_json::Value = serde_json::from_str(&table.to_json()).unwrap();
        assert_eq!(json["std"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn two_controls_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (truth, mut gcps) = survey_scene(&mut rng, 0.0);
        gcps[2].role = GcpRole::Check;
        let err = georeference(&truth, &gcps, &GeoreferenceOptions::default()).unwrap_err();
        assert_eq!(err, MergeError::NotEnoughControls(2));
    }

    #[test]
    fn collinear_controls_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let (truth, mut gcps) = survey_scene(&mut rng, 0.0);
        for (i, g) in gcps.iter_mut().take(3).enumerate() {
            g.world = Point3::new(-10.0 + 10.0 * i as f64, 0.0, 1.0);
            g.observations = truth
                .cameras
                .iter()
                .filter_map(|(&id, c)| Some((id, project(&c.intrinsics, &c.pose, &g.world).ok()?)))
                .collect();
        }
        let err = georeference(&truth, &gcps, &GeoreferenceOptions::default()).unwrap_err();
        assert!(matches!(err, MergeError::DegenerateControls(_)), "{err:?}");
    }

    #[test]
    fn table_statistics_match_hand_values() {
        let rows = vec![
            CheckResidual { gcp_id: 1, abs: [1.0, 0.0, 2.0] },
            CheckResidual { gcp_id: 2, abs: [3.0, 0.0, 2.0] },
        ];
        let t = CheckResidualTable::from_rows(rows);
        assert_eq!(t.max, [3.0, 0.0, 2.0]);
        assert_eq!(t.mean, [2.0, 0.0, 2.0]);
        assert!((t.std[0] - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(t.std[1], 0.0);
    }
}
