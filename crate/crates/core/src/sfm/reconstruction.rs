use std::collections::{BTreeMap, BTreeSet, HashMap};

use thiserror::Error;

use crate::geometry::project;
use crate::{ImageId, Intrinsics, Point3, PointId, Pose, Vec2};

#[derive(Debug, Clone, PartialEq)]
pub struct CameraEntry {
    pub intrinsics: Intrinsics,
    pub pose: Pose,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub image_id: ImageId,
    pub keypoint: usize,
    pub pixel: Vec2,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePoint {
    pub position: Point3,
    /// Sorted by image id, one per image.
    pub observations: Vec<Observation>,
}

impl ScenePoint {
    pub fn observation_in(&self, image: ImageId) -> Option<&Observation> {
        self.observations.iter().find(|o| o.image_id == image)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructionError {
    #[error("point {0} has fewer than two observations")]
    ShortTrack(PointId),
    #[error("point {point} is observed in unregistered image {image}")]
    UnregisteredImage { point: PointId, image: ImageId },
    #[error("point {0} is observed twice in one image")]
    DuplicateImage(PointId),
    #[error("point {0} has non-finite coordinates")]
    NonFinite(PointId),
    #[error("camera {0} has an invalid rotation")]
    InvalidPose(ImageId),
    #[error("registration order does not match the camera set")]
    OrderMismatch,
    #[error("mean reprojection error is not finite")]
    NonFiniteError,
}

/// Cameras, scene points and their observations.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Reconstruction {
    pub id: u32,
    pub cameras: BTreeMap<ImageId, CameraEntry>,
    pub points: BTreeMap<PointId, ScenePoint>,
    pub registered_order: Vec<ImageId>,
    pub(crate) next_point_id: PointId,
}

impl Reconstruction {
    pub fn new(id: u32) -> Self {
        Self { id, ..Default::default() }
    }

    pub fn camera_count(&self) -> usize {
        self.cameras.len()
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn is_registered(&self, image: ImageId) -> bool {
        self.cameras.contains_key(&image)
    }

    pub fn images(&self) -> BTreeSet<ImageId> {
        self.cameras.keys().copied().collect()
    }

    /// Adds or replaces a camera; new cameras are appended to the registration order.
    pub fn register(&mut self, image: ImageId, intrinsics: Intrinsics, pose: Pose) {
        if self.cameras.insert(image, CameraEntry { intrinsics, pose }).is_none() {
            self.registered_order.push(image);
        }
    }

    pub fn add_point(&mut self, position: Point3, mut observations: Vec<Observation>) -> PointId {
        observations.sort_by_key(|o| o.image_id);
        let id = self.next_point_id;
        self.next_point_id += 1;
        self.points.insert(id, ScenePoint { position, observations });
        id
    }

    /// Inserts a point under a caller-chosen id.
    pub fn insert_point(&mut self, id: PointId, point: ScenePoint) {
        self.next_point_id = self.next_point_id.max(id + 1);
        self.points.insert(id, point);
    }

    pub fn next_point_id(&self) -> PointId {
        self.next_point_id
    }

    pub fn observation_count(&self) -> usize {
        self.points.values().map(|p| p.observations.len()).sum()
    }

    /// Pixel error of one observation, `None` when the point is behind the camera.
    pub fn observation_error(&self, point: &ScenePoint, obs: &Observation) -> Option<f64> {
        let cam = self.cameras.get(&obs.image_id)?;
        project(&cam.intrinsics, &cam.pose, &point.position).ok().map(|p| (p - obs.pixel).norm())
    }

    /// Mean pixel error over all observations; behind-camera ones count as infinite.
    pub fn mean_reprojection_error(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for p in self.points.values() {
            for o in &p.observations {
                sum += self.observation_error(p, o).unwrap_or(f64::INFINITY);
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    /// `(image, keypoint) → point` lookup.
    pub fn keypoint_index(&self) -> HashMap<(ImageId, usize), PointId> {
        let mut index = HashMap::new();
        for (&id, p) in &self.points {
            for o in &p.observations {
                index.insert((o.image_id, o.keypoint), id);
            }
        }
        index
    }

    /// Points visible in each image.
    pub fn points_per_image(&self) -> BTreeMap<ImageId, usize> {
        let mut out: BTreeMap<ImageId, usize> = self.cameras.keys().map(|&k| (k, 0)).collect();
        for p in self.points.values() {
            for o in &p.observations {
                *out.entry(o.image_id).or_insert(0) += 1;
            }
        }
        out
    }

    /// Drops the camera and its observations; points left with fewer than
    /// two observations are removed.
    pub fn deregister(&mut self, image: ImageId) {
        self.cameras.remove(&image);
        self.registered_order.retain(|&i| i != image);
        self.points.retain(|_, p| {
            p.observations.retain(|o| o.image_id != image);
            p.observations.len() >= 2
        });
    }

    pub fn validate(&self) -> Result<(), ReconstructionError> {
        let order: BTreeSet<ImageId> = self.registered_order.iter().copied().collect();
        if order.len() != self.registered_order.len() || order != self.images() {
            return Err(ReconstructionError::OrderMismatch);
        }
        for (&id, c) in &self.cameras {
            if !c.pose.is_valid() {
                return Err(ReconstructionError::InvalidPose(id));
            }
        }
        for (&id, p) in &self.points {
            if p.observations.len() < 2 {
                return Err(ReconstructionError::ShortTrack(id));
            }
            if !p.position.coords.iter().all(|v| v.is_finite()) {
                return Err(ReconstructionError::NonFinite(id));
            }
            let mut seen = BTreeSet::new();
            for o in &p.observations {
                if !self.cameras.contains_key(&o.image_id) {
                    return Err(ReconstructionError::UnregisteredImage { point: id, image: o.image_id });
                }
                if !seen.insert(o.image_id) {
                    return Err(ReconstructionError::DuplicateImage(id));
                }
            }
        }
        if !self.mean_reprojection_error().is_finite() {
            return Err(ReconstructionError::NonFiniteError);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Reconstruction {
        let k = Intrinsics::simple(100.0, 50.0, 50.0, 100, 100).unwrap();
        let mut r = Reconstruction::new(0);
        r.register(1, k, Pose::identity());
        r.register(2, k, Pose::from_center(crate::Mat3::identity(), &Point3::new(1.0, 0.0, 0.0)));
        let x = Point3::new(0.0, 0.0, 5.0);
        let obs = [1, 2]
            .iter()
            .map(|&i| {
                let c = &r.cameras[&i];
                Observation { image_id: i, keypoint: 0, pixel: project(&c.intrinsics, &c.pose, &x).unwrap() }
            })
            .collect();
        r.add_point(x, obs);
        r
    }

    #[test]
    fn valid_model_passes() {
        let r = tiny();
        assert_eq!(r.validate(), Ok(()));
        assert!(r.mean_reprojection_error() < 1e-12);
    }

    #[test]
    fn checker_catches_violations() {
        let mut r = tiny();
        r.points.get_mut(&0).unwrap().observations.pop();
        assert_eq!(r.validate(), Err(ReconstructionError::ShortTrack(0)));
        let mut r = tiny();
        r.points.get_mut(&0).unwrap().observations[1].image_id = 7;
        assert_eq!(r.validate(), Err(ReconstructionError::UnregisteredImage { point: 0, image: 7 }));
        let mut r = tiny();
        r.registered_order.push(9);
        assert_eq!(r.validate(), Err(ReconstructionError::OrderMismatch));
    }

    #[test]
    fn deregistering_drops_short_points() {
        let mut r = tiny();
        r.deregister(2);
        assert_eq!(r.point_count(), 0);
        assert_eq!(r.registered_order, vec![1]);
    }
}
