use std::collections::BTreeSet;
use std::fmt::Write;

use super::{field, records, IoError};
use crate::graphalgo::Clustering;
use crate::matchgraph::MatchGraph;
use crate::merge::{GcpRecord, GcpRole};
use crate::sfm::{Observation, Reconstruction, SceneData, ScenePoint};
use crate::{ImageId, Point3, PointId, Pose, Vec2, Vec3};

pub fn write_reconstruction(recon: &Reconstruction) -> String {
    let mut out = format!("RECONSTRUCTION {}\n", recon.id);
    for id in &recon.registered_order {
        let pose = &recon.cameras[id].pose;
        let [w, x, y, z] = pose.quaternion();
        let t = pose.translation;
        writeln!(out, "CAMERA {id} {w} {x} {y} {z} {} {} {}", t.x, t.y, t.z).unwrap();
    }
    for (id, p) in &recon.points {
        let x = p.position;
        write!(out, "POINT {id} {} {} {} {}", x.x, x.y, x.z, p.observations.len()).unwrap();
        for o in &p.observations {
            write!(out, " {} {}", o.image_id, o.keypoint).unwrap();
        }
        out.push('\n');
    }
    out
}

/// Intrinsics and observation pixels come from `scene`.
pub fn read_reconstruction(text: &str, scene: &SceneData) -> Result<Reconstruction, IoError> {
    let mut recon = Reconstruction::new(0);
    for (line, parts) in records(text) {
        match parts[0] {
            "RECONSTRUCTION" => recon.id = field(&parts, 1, line)?,
            "CAMERA" => {
                let id: ImageId = field(&parts, 1, line)?;
                let mut v = [0.0f64; 7];
                for (i, slot) in v.iter_mut().enumerate() {
                    *slot = field(&parts, 2 + i, line)?;
                }
                let k = scene.intrinsics.get(&id).ok_or_else(|| IoError::parse(line, format!("unknown image {id}")))?;
                let pose = Pose::from_quaternion([v[0], v[1], v[2], v[3]], Vec3::new(v[4], v[5], v[6]));
                recon.register(id, *k, pose);
            }
            "POINT" => {
                let id: PointId = field(&parts, 1, line)?;
                let position = Point3::new(field(&parts, 2, line)?, field(&parts, 3, line)?, field(&parts, 4, line)?);
                let n: usize = field(&parts, 5, line)?;
                if parts.len() != 6 + 2 * n {
                    return Err(IoError::parse(line, format!("POINT declares {n} observations")));
                }
                let mut observations = Vec::with_capacity(n);
                for o in 0..n {
                    let image_id: ImageId = field(&parts, 6 + 2 * o, line)?;
                    let keypoint: usize = field(&parts, 7 + 2 * o, line)?;
                    let f = scene
                        .features
                        .get(&image_id)
                        .filter(|f| keypoint < f.len())
                        .ok_or_else(|| IoError::parse(line, format!("keypoint {keypoint} of image {image_id} not in dataset")))?;
                    observations.push(Observation { image_id, keypoint, pixel: f.pixel(keypoint) });
                }
                recon.insert_point(id, ScenePoint { position, observations });
            }
            other => return Err(IoError::parse(line, format!("unknown record {other}"))),
        }
    }
    Ok(recon)
}

pub fn write_gcps(gcps: &[GcpRecord]) -> String {
    let mut out = String::new();
    for g in gcps {
        let role = match g.role {
            GcpRole::Control => "control",
            GcpRole::Check => "check",
        };
        writeln!(out, "GCP {} {} {} {} {role}", g.id, g.world.x, g.world.y, g.world.z).unwrap();
    }
    for g in gcps {
        for (img, px) in &g.observations {
            writeln!(out, "GCPOBS {} {img} {} {}", g.id, px.x, px.y).unwrap();
        }
    }
    out
}

pub fn read_gcps(text: &str) -> Result<Vec<GcpRecord>, IoError> {
    let mut gcps: Vec<GcpRecord> = Vec::new();
    for (line, parts) in records(text) {
        match parts[0] {
            "GCP" => {
                let id: u32 = field(&parts, 1, line)?;
                if gcps.iter().any(|g| g.id == id) {
                    return Err(IoError::parse(line, format!("duplicate GCP {id}")));
                }
                let world = Point3::new(field(&parts, 2, line)?, field(&parts, 3, line)?, field(&parts, 4, line)?);
                let role = match parts.get(5).copied() {
                    Some("control") => GcpRole::Control,
                    Some("check") => GcpRole::Check,
                    _ => return Err(IoError::parse(line, "GCP role must be control or check")),
                };
                gcps.push(GcpRecord { id, world, observations: Vec::new(), role });
            }
            "GCPOBS" => {
                let id: u32 = field(&parts, 1, line)?;
                let img: ImageId = field(&parts, 2, line)?;
                let px = Vec2::new(field(&parts, 3, line)?, field(&parts, 4, line)?);
                let g = gcps
                    .iter_mut()
                    .find(|g| g.id == id)
                    .ok_or_else(|| IoError::parse(line, format!("observation of undeclared GCP {id}")))?;
                g.observations.push((img, px));
            }
            other => return Err(IoError::parse(line, format!("unknown record {other}"))),
        }
    }
    Ok(gcps)
}

pub fn write_graph(graph: &MatchGraph) -> String {
    let mut out = String::new();
    for e in graph.edges() {
        writeln!(out, "EDGE {} {} {} {}", e.a, e.b, e.weight, e.inlier_count).unwrap();
    }
    out
}

pub fn write_wcds(vertices: &[ImageId]) -> String {
    let mut out = String::from("WCDS");
    for v in vertices {
        write!(out, " {v}").unwrap();
    }
    out.push('\n');
    out
}

pub fn read_wcds(text: &str) -> Result<Vec<ImageId>, IoError> {
    let mut out = Vec::new();
    for (line, parts) in records(text) {
        if parts[0] != "WCDS" {
            return Err(IoError::parse(line, format!("unknown record {}", parts[0])));
        }
        for i in 1..parts.len() {
            out.push(field(&parts, i, line)?);
        }
    }
    Ok(out)
}

pub fn write_clusters(clustering: &Clustering) -> String {
    let mut out = String::new();
    for (k, c) in clustering.clusters.iter().enumerate() {
        write!(out, "CLUSTER {k}:").unwrap();
        for v in c {
            write!(out, " {v}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn read_clusters(text: &str) -> Result<Vec<BTreeSet<ImageId>>, IoError> {
    let mut out = Vec::new();
    for (line, parts) in records(text) {
        if parts[0] != "CLUSTER" || parts.len() < 2 || !parts[1].ends_with(':') {
            return Err(IoError::parse(line, "expected CLUSTER k: ids"));
        }
        let mut c = BTreeSet::new();
        for i in 2..parts.len() {
            c.insert(field::<ImageId>(&parts, i, line)?);
        }
        out.push(c);
    }
    Ok(out)
}
