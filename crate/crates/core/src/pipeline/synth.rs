use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{exp_so3, project};
use crate::io::{self, IoError};
use crate::matchgraph::{FeatureSet, ImageMeta, Keypoint, MatchPair, MatchStore};
use crate::merge::{GcpRecord, GcpRole};
use crate::sfm::{Observation, Reconstruction, SceneData};
use crate::{ImageId, Intrinsics, Point3, Pose, Vec2, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CameraPattern {
    /// Serpentine grid looking straight down.
    Nadir,
    /// Five-camera rig per station: nadir plus four views tilted by `rig_tilt_deg`.
    Oblique,
    /// Ring around the site centre looking inwards.
    Orbit,
}

impl std::str::FromStr for CameraPattern {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nadir" => Ok(Self::Nadir),
            "oblique" => Ok(Self::Oblique),
            "orbit" => Ok(Self::Orbit),
            _ => Err(format!("unknown camera pattern {s}")),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthConfig {
    pub pattern: CameraPattern,
    pub image_count: usize,
    pub point_count: usize,
    pub building_count: usize,
    /// Station spacing along and across flight lines, metres.
    pub spacing: [f64; 2],
    pub altitude: f64,
    pub focal_px: f64,
    pub width: u32,
    pub height: u32,
    pub pixel_noise: f64,
    /// Fraction of each pair's matches replaced by random wrong ones.
    pub outlier_rate: f64,
    /// Extra unmatched keypoints per image, as a fraction of the real ones.
    pub distractor_rate: f64,
    pub descriptor_dim: usize,
    pub gcp_count: usize,
    pub gcp_controls: usize,
    pub rig_tilt_deg: f64,
    /// Pairs sharing fewer points get no match record.
    pub min_shared: usize,
    pub seed: u64,
    /// Seed of the pixel noise alone; `None` derives it from `seed`.
    pub noise_seed: Option<u64>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            pattern: CameraPattern::Nadir,
            image_count: 120,
            point_count: 4000,
            building_count: 20,
            spacing: [20.0, 22.0],
            altitude: 100.0,
            focal_px: 1000.0,
            width: 1000,
            height: 750,
            pixel_noise: 0.4,
            outlier_rate: 0.0,
            distractor_rate: 0.1,
            descriptor_dim: 32,
            gcp_count: 0,
            gcp_controls: 3,
            rig_tilt_deg: 45.0,
            min_shared: 16,
            seed: 0,
            noise_seed: None,
        }
    }
}

impl SynthConfig {
    /// 120 images, 4000 points, 0.4 px noise.
    pub fn standard() -> Self {
        Self::default()
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub scene: SceneData,
    /// Every camera with its true pose; points carry noisy observations.
    pub truth: Reconstruction,
    pub gcps: Vec<GcpRecord>,
}

#[derive(Debug, Clone, Copy)]
struct Building {
    min: [f64; 2],
    max: [f64; 2],
    height: f64,
}

fn ground(x: f64, y: f64) -> f64 {
    8.0 * (x / 30.0).sin() * (y / 25.0).cos() + 4.0 * ((x + y) / 17.0).sin()
}

fn stations(cfg: &SynthConfig, n: usize) -> Vec<Point3> {
    let rows = ((n as f64 * 0.75).sqrt().round() as usize).max(1);
    let cols = n.div_ceil(rows);
    let mut out = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        for c in 0..cols {
            let c = if r % 2 == 0 { c } else { cols - 1 - c };
            out.push(Point3::new(c as f64 * cfg.spacing[0], r as f64 * cfg.spacing[1], cfg.altitude));
        }
    }
    out.truncate(n);
    out
}

fn nadir(eye: &Point3) -> Pose {
    Pose::look_at(eye, &Point3::new(eye.x, eye.y, eye.z - 1.0), &-Vec3::y())
}

fn camera_poses(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<Pose> {
    let jitter = |rng: &mut ChaCha8Rng, deg: f64| {
        let a = deg.to_radians();
        exp_so3(&Vec3::new(rng.gen_range(-a..a), rng.gen_range(-a..a), rng.gen_range(-a..a)))
    };
    match cfg.pattern {
        CameraPattern::Nadir => stations(cfg, cfg.image_count)
            .into_iter()
            .map(|s| {
                let eye = Point3::new(s.x, s.y, s.z + rng.gen_range(-2.0..2.0));
                let p = nadir(&eye);
                Pose::from_center(jitter(rng, 3.0) * p.rotation, &eye)
            })
            .collect(),
        CameraPattern::Oblique => {
            let t = cfg.rig_tilt_deg.to_radians();
            // in the nadir camera frame: x right, y down
            let views = [Vec3::zeros(), Vec3::new(t, 0.0, 0.0), Vec3::new(-t, 0.0, 0.0), Vec3::new(0.0, t, 0.0), Vec3::new(0.0, -t, 0.0)];
            let mut out = Vec::new();
            for s in stations(cfg, cfg.image_count.div_ceil(5)) {
                let rig = jitter(rng, 3.0) * nadir(&s).rotation;
                for v in &views {
                    out.push(Pose::from_center(exp_so3(v) * rig, &s));
                }
            }
            out.truncate(cfg.image_count);
            out
        }
        CameraPattern::Orbit => {
            let n = cfg.image_count;
            let extent = stations(cfg, n).iter().fold(0.0f64, |m, p| m.max(p.x).max(p.y));
            let c = Point3::new(extent / 2.0, extent / 2.0, 0.0);
            let radius = extent.max(60.0);
            (0..n)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64;
                    let eye = Point3::new(c.x + radius * a.cos(), c.y + radius * a.sin(), cfg.altitude * 0.6);
                    let p = Pose::look_at(&eye, &c, &-Vec3::z());
                    Pose::from_center(jitter(rng, 1.0) * p.rotation, &eye)
                })
                .collect()
        }
    }
}

fn site_bounds(poses: &[Pose], cfg: &SynthConfig) -> ([f64; 2], [f64; 2]) {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in poses {
        let c = p.center();
        lo = [lo[0].min(c.x), lo[1].min(c.y)];
        hi = [hi[0].max(c.x), hi[1].max(c.y)];
    }
    let margin = [
        0.4 * cfg.altitude * cfg.width as f64 / cfg.focal_px,
        0.4 * cfg.altitude * cfg.height as f64 / cfg.focal_px,
    ];
    if cfg.pattern == CameraPattern::Orbit {
        let c = [(lo[0] + hi[0]) / 2.0, (lo[1] + hi[1]) / 2.0];
        let r = (hi[0] - lo[0]) / 4.0;
        return ([c[0] - r, c[1] - r], [c[0] + r, c[1] + r]);
    }
    ([lo[0] - margin[0], lo[1] - margin[1]], [hi[0] + margin[0], hi[1] + margin[1]])
}

fn scene_points(cfg: &SynthConfig, lo: [f64; 2], hi: [f64; 2], rng: &mut ChaCha8Rng) -> (Vec<Point3>, Vec<Building>) {
    let mut buildings = Vec::new();
    for _ in 0..cfg.building_count {
        let w = rng.gen_range(12.0..30.0);
        let d = rng.gen_range(12.0..30.0);
        let x = rng.gen_range(lo[0]..(hi[0] - w).max(lo[0] + 1.0));
        let y = rng.gen_range(lo[1]..(hi[1] - d).max(lo[1] + 1.0));
        buildings.push(Building { min: [x, y], max: [x + w, y + d], height: rng.gen_range(10.0..40.0) });
    }
    let mut points = Vec::with_capacity(cfg.point_count);
    for _ in 0..cfg.point_count {
        let x = rng.gen_range(lo[0]..hi[0]);
        let y = rng.gen_range(lo[1]..hi[1]);
        let inside = buildings.iter().find(|b| x >= b.min[0] && x <= b.max[0] && y >= b.min[1] && y <= b.max[1]);
        let p = match inside {
            None => Point3::new(x, y, ground(x, y)),
            Some(b) if rng.gen_bool(0.6) => Point3::new(x, y, ground(b.min[0], b.min[1]) + b.height),
            Some(b) => {
                // a facade point below the roof edge
                let z = ground(b.min[0], b.min[1]) + rng.gen_range(0.0..b.height);
                match rng.gen_range(0..4) {
                    0 => Point3::new(b.min[0], y, z),
                    1 => Point3::new(b.max[0], y, z),
                    2 => Point3::new(x, b.min[1], z),
                    _ => Point3::new(x, b.max[1], z),
                }
            }
        };
        points.push(p);
    }
    (points, buildings)
}

fn unit_descriptor(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f32> {
    let n = Normal::new(0.0f32, 1.0).unwrap();
    let v: Vec<f32> = (0..dim).map(|_| n.sample(rng)).collect();
    let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
    v.into_iter().map(|x| x / norm).collect()
}

fn in_frame(k: &Intrinsics, pose: &Pose, x: &Point3) -> Option<Vec2> {
    let p = project(k, pose, x).ok()?;
    (p.x >= 0.0 && p.y >= 0.0 && p.x < k.image_width as f64 && p.y < k.image_height as f64).then_some(p)
}

/// Builds the scene described by `cfg`. Identical configs give identical data.
pub fn generate_synthetic(cfg: &SynthConfig) -> SyntheticDataset {
    assert!(cfg.image_count >= 2, "need at least two images");
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = Intrinsics::simple(cfg.focal_px, cfg.width as f64 / 2.0, cfg.height as f64 / 2.0, cfg.width, cfg.height)
        .expect("valid synthetic intrinsics");
    let poses = camera_poses(cfg, &mut rng);
    let (lo, hi) = site_bounds(&poses, cfg);
    let (points, _) = scene_points(cfg, lo, hi, &mut rng);
    let descriptors: Vec<Vec<f32>> = (0..points.len()).map(|_| unit_descriptor(&mut rng, cfg.descriptor_dim)).collect();
    let noise = Normal::new(0.0, cfg.pixel_noise.max(1e-300)).unwrap();
    let desc_noise = Normal::new(0.0f32, 0.03).unwrap();
    // separate stream so the noise can vary while the scene stays fixed
    let mut noise_rng = ChaCha8Rng::seed_from_u64(cfg.noise_seed.unwrap_or(cfg.seed));
    noise_rng.set_stream(1);
    let mut sample_noise = || {
        if cfg.pixel_noise > 0.0 {
            Vec2::new(noise.sample(&mut noise_rng), noise.sample(&mut noise_rng))
        } else {
            Vec2::zeros()
        }
    };

    let mut scene = SceneData::default();
    let mut truth = Reconstruction::new(0);
    // per image: point index → keypoint index
    let mut kp_of: Vec<BTreeMap<usize, usize>> = Vec::with_capacity(poses.len());
    for (i, pose) in poses.iter().enumerate() {
        let id = i as ImageId;
        let mut f = FeatureSet::new(id);
        f.dim = cfg.descriptor_dim;
        let mut map = BTreeMap::new();
        for (pi, x) in points.iter().enumerate() {
            let Some(p) = in_frame(&k, pose, x) else { continue };
            let px = p + sample_noise();
            map.insert(pi, f.keypoints.len());
            f.keypoints.push(Keypoint { x: px.x, y: px.y, scale: rng.gen_range(1.0..8.0) });
            f.descriptors.extend(descriptors[pi].iter().map(|v| v + desc_noise.sample(&mut rng)));
        }
        let distractors = (map.len() as f64 * cfg.distractor_rate).round() as usize;
        for _ in 0..distractors {
            f.keypoints.push(Keypoint {
                x: rng.gen_range(0.0..cfg.width as f64),
                y: rng.gen_range(0.0..cfg.height as f64),
                scale: rng.gen_range(1.0..8.0),
            });
            f.descriptors.extend(unit_descriptor(&mut rng, cfg.descriptor_dim));
        }
        scene.metas.insert(id, ImageMeta::new(id, cfg.width, cfg.height));
        scene.intrinsics.insert(id, k);
        scene.features.insert(id, f);
        truth.register(id, k, *pose);
        kp_of.push(map);
    }

    let mut store = MatchStore::default();
    for a in 0..poses.len() {
        for b in a + 1..poses.len() {
            let mut m: Vec<(usize, usize)> =
                kp_of[a].iter().filter_map(|(pi, &ka)| Some((ka, *kp_of[b].get(pi)?))).collect();
            if m.len() < cfg.min_shared {
                continue;
            }
            let nb = scene.features[&(b as ImageId)].len();
            let bad = (m.len() as f64 * cfg.outlier_rate).round() as usize;
            let mut idx: Vec<usize> = (0..m.len()).collect();
            idx.shuffle(&mut rng);
            for &i in &idx[..bad] {
                m[i].1 = rng.gen_range(0..nb);
            }
            store.insert(MatchPair::new(a as ImageId, b as ImageId, m).expect("distinct images"));
        }
    }
    scene.matches = store;

    for (pi, x) in points.iter().enumerate() {
        let obs: Vec<Observation> = kp_of
            .iter()
            .enumerate()
            .filter_map(|(i, map)| {
                let kp = *map.get(&pi)?;
                let id = i as ImageId;
                Some(Observation { image_id: id, keypoint: kp, pixel: scene.features[&id].pixel(kp) })
            })
            .collect();
        if obs.len() >= 2 {
            truth.add_point(*x, obs);
        }
    }

    let gcps = make_gcps(cfg, lo, hi, &poses, &k, &mut rng, &mut sample_noise);
    SyntheticDataset { config: cfg.clone(), scene, truth, gcps }
}

fn make_gcps(
    cfg: &SynthConfig,
    lo: [f64; 2],
    hi: [f64; 2],
    poses: &[Pose],
    k: &Intrinsics,
    rng: &mut ChaCha8Rng,
    noise: &mut impl FnMut() -> Vec2,
) -> Vec<GcpRecord> {
    // controls spread over the site, checks anywhere inside it
    let spread = [(0.2, 0.2), (0.8, 0.25), (0.5, 0.8), (0.2, 0.8), (0.8, 0.8)];
    let mut out = Vec::new();
    for g in 0..cfg.gcp_count {
        let (fx, fy) = if g < cfg.gcp_controls && g < spread.len() {
            spread[g]
        } else {
            (rng.gen_range(0.15..0.85), rng.gen_range(0.15..0.85))
        };
        let x = lo[0] + fx * (hi[0] - lo[0]);
        let y = lo[1] + fy * (hi[1] - lo[1]);
        let world = Point3::new(x, y, ground(x, y));
        let observations = poses
            .iter()
            .enumerate()
            .filter_map(|(i, p)| in_frame(k, p, &world).map(|px| (i as ImageId, px + noise())))
            .collect();
        let role = if g < cfg.gcp_controls { GcpRole::Control } else { GcpRole::Check };
        out.push(GcpRecord { id: g as u32 + 1, world, observations, role });
    }
    out
}

impl SyntheticDataset {
    /// Writes `dataset.txt`, `matches.txt`, `truth.txt` and, with GCPs, `gcps.txt`.
    pub fn write(&self, dir: &Path) -> Result<(), IoError> {
        io::write_file(&dir.join("dataset.txt"), &io::write_scene(&self.scene))?;
        io::write_file(&dir.join("matches.txt"), &io::write_matches(&self.scene.matches))?;
        io::write_file(&dir.join("truth.txt"), &io::write_reconstruction(&self.truth))?;
        if !self.gcps.is_empty() {
            io::write_file(&dir.join("gcps.txt"), &io::write_gcps(&self.gcps))?;
        }
        Ok(())
    }
}

/// Dataset files as written by [`SyntheticDataset::write`]; all but
/// `dataset.txt` are optional.
#[derive(Debug, Clone)]
pub struct LoadedDataset {
    pub scene: SceneData,
    pub truth: Option<Reconstruction>,
    pub gcps: Vec<GcpRecord>,
}

pub fn load_dataset(dir: &Path) -> Result<LoadedDataset, IoError> {
    let mut text = io::read_file(&dir.join("dataset.txt"))?;
    let matches = dir.join("matches.txt");
    if matches.exists() {
        text.push('\n');
        text.push_str(&io::read_file(&matches)?);
    }
    let scene = io::read_scene(&text)?;
    let truth_path = dir.join("truth.txt");
    let truth = if truth_path.exists() { Some(io::read_reconstruction(&io::read_file(&truth_path)?, &scene)?) } else { None };
    let gcp_path = dir.join("gcps.txt");
    let gcps = if gcp_path.exists() { io::read_gcps(&io::read_file(&gcp_path)?)? } else { Vec::new() };
    Ok(LoadedDataset { scene, truth, gcps })
}
