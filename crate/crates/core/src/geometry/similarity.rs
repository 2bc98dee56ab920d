use nalgebra::{Matrix3, Point3, Vector3};

use super::{CameraPose, GeometryError};
use crate::Real;

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform<T: Real> {
    pub scale: T,
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> SimilarityTransform<T> {
    pub fn identity() -> Self {
        Self { scale: T::one(), rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    pub fn new(scale: T, rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeometryError> {
        if !(scale > T::zero()) {
            return Err(GeometryError::Degenerate("similarity scale must be positive"));
        }
        CameraPose::new(rotation, translation)?;
        Ok(Self { scale, rotation, translation })
    }

    pub fn apply(&self, p: &Point3<T>) -> Point3<T> {
        Point3::from(self.rotation * p.coords * self.scale + self.translation)
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        let inv_s = T::one() / self.scale;
        Self { scale: inv_s, rotation: rt, translation: -(rt * self.translation) * inv_s }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            scale: self.scale * other.scale,
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation * self.scale + self.translation,
        }
    }

    /// Re-expresses a world-to-camera pose after the world frame is mapped by
    /// `self`. Projections of mapped points are unchanged.
    pub fn transform_pose(&self, pose: &CameraPose<T>) -> CameraPose<T> {
        let rc_rt = pose.rotation * self.rotation.transpose();
        CameraPose {
            rotation: rc_rt,
            translation: pose.translation * self.scale - rc_rt * self.translation,
        }
    }

    /// Mean squared distance between `dst` and the mapped `src`.
    pub fn mse(&self, src: &[Point3<T>], dst: &[Point3<T>]) -> T {
        let mut sum = T::zero();
        for (s, d) in src.iter().zip(dst) {
            sum += (d - self.apply(s)).norm_squared();
        }
        sum / T::from_count(src.len().max(1))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SimilarityEstimate<T: Real> {
    pub transform: SimilarityTransform<T>,
    /// Mean squared alignment error of the fitted pairs.
    pub mse: T,
}

/// Closed-form least-squares similarity from `src` to `dst` (Umeyama).
pub fn umeyama_similarity<T: Real>(
    src: &[Point3<T>],
    dst: &[Point3<T>],
) -> Result<SimilarityEstimate<T>, GeometryError> {
    if src.len() != dst.len() {
        return Err(GeometryError::LengthMismatch(src.len(), dst.len()));
    }
    let n = src.len();
    if n < 3 {
        return Err(GeometryError::NotEnoughData { needed: 3, got: n });
    }
    let nf = T::from_count(n);
    let mu_s = src.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / nf;
    let mu_d = dst.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / nf;

    let mut var_s = T::zero();
    let mut scatter_s = Matrix3::zeros();
    let mut cov = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let sc = s.coords - mu_s;
        let dc = d.coords - mu_d;
        var_s += sc.norm_squared();
        scatter_s += sc * sc.transpose();
        cov += dc * sc.transpose();
    }
    var_s /= nf;
    cov /= nf;

    let sv = scatter_s.symmetric_eigenvalues();
    let mut sv: Vec<T> = sv.iter().cloned().collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap());
    if !(sv[0] > T::zero()) || sv[1] <= sv[0] * T::lit(1e-12) {
        return Err(GeometryError::Degenerate("source points are collinear"));
    }

    let svd = cov.svd(true, true);
    let u = svd.u.ok_or(GeometryError::Degenerate("svd failed"))?;
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let mut s = Matrix3::identity();
    if u.determinant() * v_t.determinant() < T::zero() {
        s[(2, 2)] = -T::one();
    }
    let rotation = u * s * v_t;
    let d = svd.singular_values;
    let trace_ds = d[0] * s[(0, 0)] + d[1] * s[(1, 1)] + d[2] * s[(2, 2)];
    let scale = trace_ds / var_s;
    let translation = mu_d - rotation * mu_s * scale;
    let transform = SimilarityTransform { scale, rotation, translation };
    let mse = transform.mse(src, dst);
    Ok(SimilarityEstimate { transform, mse })
}
