use std::collections::BTreeMap;

use serde::Serialize;

use crate::geometry::{rotation_angle, umeyama_similarity};
use crate::sfm::Reconstruction;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct EvalMetrics {
    /// Seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub mean_reprojection_error: f64,
    pub registered_images: usize,
    pub total_images: usize,
    pub point_count: usize,
    pub observation_count: usize,
    /// Cameras used for the ground-truth alignment.
    pub aligned_cameras: usize,
    /// Camera position RMSE after similarity alignment, scene units.
    pub position_rmse: Option<f64>,
    pub rotation_error_mean_deg: Option<f64>,
    pub rotation_error_max_deg: Option<f64>,
}

impl EvalMetrics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize")
    }
}

/// Compares `recon` with the ground-truth cameras. Alignment uses the camera
/// centres of images present in both; with fewer than three (or collinear
/// centres) only the counts are reported.
pub fn evaluate(recon: &Reconstruction, truth: &Reconstruction) -> EvalMetrics {
    let mut m = EvalMetrics {
        mean_reprojection_error: recon.mean_reprojection_error(),
        registered_images: recon.camera_count(),
        total_images: truth.camera_count(),
        point_count: recon.point_count(),
        observation_count: recon.observation_count(),
        ..Default::default()
    };
    let common: Vec<_> = recon.cameras.keys().filter(|id| truth.cameras.contains_key(id)).copied().collect();
    let src: Vec<_> = common.iter().map(|id| recon.cameras[id].pose.center()).collect();
    let dst: Vec<_> = common.iter().map(|id| truth.cameras[id].pose.center()).collect();
    let Ok(est) = umeyama_similarity(&src, &dst) else { return m };
    let t = est.transform;
    m.aligned_cameras = common.len();
    m.position_rmse = Some(est.mse.sqrt());
    let errs: Vec<f64> = common
        .iter()
        .map(|id| rotation_angle(&t.transform_pose(&recon.cameras[id].pose).rotation, &truth.cameras[id].pose.rotation).to_degrees())
        .collect();
    m.rotation_error_mean_deg = Some(errs.iter().sum::<f64>() / errs.len() as f64);
    m.rotation_error_max_deg = Some(errs.iter().cloned().fold(0.0, f64::max));
    m
}
