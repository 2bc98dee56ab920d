use std::collections::BTreeMap;
use std::fmt::Write;

use super::{field, records, IoError};
use crate::matchgraph::{FeatureSet, ImageMeta, Keypoint, MatchPair, MatchStore};
use crate::sfm::SceneData;
use crate::{ImageId, Intrinsics};

/// Images, intrinsics, keypoints and descriptors. Matches go to a separate file.
pub fn write_scene(scene: &SceneData) -> String {
    let mut out = String::new();
    let mut models: BTreeMap<u32, Intrinsics> = BTreeMap::new();
    for (id, m) in &scene.metas {
        if let Some(k) = scene.intrinsics.get(id) {
            models.entry(m.camera_model).or_insert(*k);
        }
    }
    for (model, k) in &models {
        writeln!(
            out,
            "INTRINSICS {model} {} {} {} {} {} {}",
            k.focal_x, k.focal_y, k.principal_x, k.principal_y, k.image_width, k.image_height
        )
        .unwrap();
    }
    for m in scene.metas.values() {
        writeln!(out, "IMAGE {} {} {} {}", m.image_id, m.width, m.height, m.camera_model).unwrap();
    }
    for (id, f) in &scene.features {
        for kp in &f.keypoints {
            writeln!(out, "KEYPOINT {id} {} {} {}", kp.x, kp.y, kp.scale).unwrap();
        }
        if f.has_descriptors() {
            for i in 0..f.len() {
                write!(out, "DESC {id} {i}").unwrap();
                for v in f.descriptor(i) {
                    write!(out, " {v}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    out
}

pub fn write_matches(store: &MatchStore) -> String {
    let mut out = String::new();
    for p in store.pairs() {
        for &(i, j) in &p.matches {
            writeln!(out, "MATCH {} {} {i} {j}", p.image_a, p.image_b).unwrap();
        }
    }
    out
}

/// Parses any mix of dataset and match records.
pub fn read_scene(text: &str) -> Result<SceneData, IoError> {
    let mut scene = SceneData::default();
    let mut models: BTreeMap<u32, Intrinsics> = BTreeMap::new();
    let mut descs: BTreeMap<ImageId, Vec<(usize, Vec<f32>)>> = BTreeMap::new();
    let mut matches: BTreeMap<(ImageId, ImageId), Vec<(usize, usize)>> = BTreeMap::new();
    for (line, parts) in records(text) {
        match parts[0] {
            "INTRINSICS" => {
                let model: u32 = field(&parts, 1, line)?;
                let k = Intrinsics::new(
                    field(&parts, 2, line)?,
                    field(&parts, 3, line)?,
                    field(&parts, 4, line)?,
                    field(&parts, 5, line)?,
                    field(&parts, 6, line)?,
                    field(&parts, 7, line)?,
                )
                .map_err(|e| IoError::parse(line, e.to_string()))?;
                models.insert(model, k);
            }
            "IMAGE" => {
                let id: ImageId = field(&parts, 1, line)?;
                let mut meta = ImageMeta::new(id, field(&parts, 2, line)?, field(&parts, 3, line)?);
                if parts.len() > 4 {
                    meta.camera_model = field(&parts, 4, line)?;
                }
                scene.metas.insert(id, meta);
                scene.features.entry(id).or_insert_with(|| FeatureSet::new(id));
            }
            "KEYPOINT" => {
                let id: ImageId = field(&parts, 1, line)?;
                let kp = Keypoint { x: field(&parts, 2, line)?, y: field(&parts, 3, line)?, scale: field(&parts, 4, line)? };
                scene.features.entry(id).or_insert_with(|| FeatureSet::new(id)).keypoints.push(kp);
            }
            "DESC" => {
                let id: ImageId = field(&parts, 1, line)?;
                let idx: usize = field(&parts, 2, line)?;
                let v = (3..parts.len()).map(|i| field(&parts, i, line)).collect::<Result<Vec<f32>, _>>()?;
                descs.entry(id).or_default().push((idx, v));
            }
            "MATCH" => {
                let (a, b): (ImageId, ImageId) = (field(&parts, 1, line)?, field(&parts, 2, line)?);
                let (i, j): (usize, usize) = (field(&parts, 3, line)?, field(&parts, 4, line)?);
                if a == b {
                    return Err(IoError::parse(line, "match pair references one image twice"));
                }
                let m = if a < b { (i, j) } else { (j, i) };
                matches.entry((a.min(b), a.max(b))).or_default().push(m);
            }
            other => return Err(IoError::parse(line, format!("unknown record {other}"))),
        }
    }
    for (id, meta) in &scene.metas {
        let k = models.get(&meta.camera_model).ok_or_else(|| {
            IoError::parse(0, format!("image {id} uses undefined intrinsics {}", meta.camera_model))
        })?;
        scene.intrinsics.insert(*id, *k);
    }
    for (id, rows) in descs {
        let f = scene.features.get_mut(&id).ok_or_else(|| IoError::parse(0, format!("descriptors for unknown image {id}")))?;
        let dim = rows.first().map_or(0, |r| r.1.len());
        let mut flat = vec![0f32; dim * f.len()];
        let mut seen = vec![false; f.len()];
        for (idx, v) in rows {
            if idx >= f.len() || v.len() != dim {
                return Err(IoError::parse(0, format!("descriptor {idx} of image {id} does not fit")));
            }
            flat[idx * dim..(idx + 1) * dim].copy_from_slice(&v);
            seen[idx] = true;
        }
        if seen.iter().all(|s| *s) {
            f.dim = dim;
            f.descriptors = flat;
        }
    }
    for ((a, b), m) in matches {
        for &(i, j) in &m {
            let (na, nb) = (scene.features.get(&a).map_or(0, |f| f.len()), scene.features.get(&b).map_or(0, |f| f.len()));
            if i >= na || j >= nb {
                return Err(IoError::parse(0, format!("match {i}-{j} out of range for pair {a}-{b}")));
            }
        }
        scene.matches.insert(MatchPair::new(a, b, m).expect("distinct images"));
    }
    Ok(scene)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SceneData {
        let mut s = SceneData::default();
        let k = Intrinsics::simple(500.0, 320.0, 240.0, 640, 480).unwrap();
        for id in [3u32, 7] {
            s.metas.insert(id, ImageMeta::new(id, 640, 480));
            s.intrinsics.insert(id, k);
            let mut f = FeatureSet::new(id);
            f.dim = 2;
            for i in 0..3 {
                f.keypoints.push(Keypoint { x: 10.5 * i as f64, y: 0.1 + id as f64, scale: 1.25 });
                f.descriptors.extend([i as f32 * 0.5, 0.1]);
            }
            s.features.insert(id, f);
        }
        s.matches.insert(MatchPair::new(7, 3, vec![(0, 1), (2, 2)]).unwrap());
        s
    }

    #[test]
    fn scene_round_trip() {
        let s = small();
        let text = write_scene(&s) + &write_matches(&s.matches);
        let back = read_scene(&text).unwrap();
        assert_eq!(back.metas, s.metas);
        assert_eq!(back.intrinsics, s.intrinsics);
        assert_eq!(back.features, s.features);
        assert_eq!(back.matches.get(3, 7).unwrap().matches, vec![(1, 0), (2, 2)]);
        assert_eq!(write_scene(&back), write_scene(&s));
    }

    #[test]
    fn errors_carry_line_numbers() {
        let err = read_scene("# header\nIMAGE 1 640\n").unwrap_err();
        assert!(matches!(err, IoError::Parse { line: 2, .. }), "{err}");
        assert!(read_scene("BOGUS 1\n").is_err());
        assert!(read_scene("IMAGE 1 640 480\n").is_err());
    }
}
