use nalgebra::{Matrix3, Point3, Rotation3, UnitQuaternion, Vector2, Vector3};

use super::GeometryError;
use crate::Real;

/// Calibrated pinhole intrinsics. Never optimized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics<T: Real> {
    pub focal_x: T,
    pub focal_y: T,
    pub principal_x: T,
    pub principal_y: T,
    pub image_width: u32,
    pub image_height: u32,
}

impl<T: Real> CameraIntrinsics<T> {
    pub fn new(
        focal_x: T,
        focal_y: T,
        principal_x: T,
        principal_y: T,
        image_width: u32,
        image_height: u32,
    ) -> Result<Self, GeometryError> {
        if !(focal_x > T::zero()) || !(focal_y > T::zero()) {
            return Err(GeometryError::InvalidIntrinsics("focal length must be positive"));
        }
        let inside = |p: T, extent: u32| p >= T::zero() && p <= T::from_count(extent as usize);
        if !inside(principal_x, image_width) || !inside(principal_y, image_height) {
            return Err(GeometryError::InvalidIntrinsics("principal point outside the image"));
        }
        Ok(Self { focal_x, focal_y, principal_x, principal_y, image_width, image_height })
    }

    /// Square-pixel camera with the principal point at `(cx, cy)`.
    pub fn simple(focal: T, cx: T, cy: T, image_width: u32, image_height: u32) -> Result<Self, GeometryError> {
        Self::new(focal, focal, cx, cy, image_width, image_height)
    }

    pub fn matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(
            self.focal_x, z, self.principal_x,
            z, self.focal_y, self.principal_y,
            z, z, o,
        )
    }

    pub fn inverse_matrix(&self) -> Matrix3<T> {
        let (z, o) = (T::zero(), T::one());
        Matrix3::new(
            o / self.focal_x, z, -self.principal_x / self.focal_x,
            z, o / self.focal_y, -self.principal_y / self.focal_y,
            z, z, o,
        )
    }

    /// Pixel to normalized image plane coordinates.
    pub fn normalize(&self, pixel: &Vector2<T>) -> Vector2<T> {
        Vector2::new(
            (pixel.x - self.principal_x) / self.focal_x,
            (pixel.y - self.principal_y) / self.focal_y,
        )
    }

    pub fn denormalize(&self, n: &Vector2<T>) -> Vector2<T> {
        Vector2::new(n.x * self.focal_x + self.principal_x, n.y * self.focal_y + self.principal_y)
    }

    /// Unit viewing ray of a pixel, in camera coordinates.
    pub fn ray(&self, pixel: &Vector2<T>) -> Vector3<T> {
        let n = self.normalize(pixel);
        Vector3::new(n.x, n.y, T::one()).normalize()
    }

    pub fn mean_focal(&self) -> T {
        (self.focal_x + self.focal_y) * T::lit(0.5)
    }

    pub fn image_area(&self) -> T {
        T::from_count(self.image_width as usize) * T::from_count(self.image_height as usize)
    }

    pub fn cast<U: Real>(&self) -> CameraIntrinsics<U> {
        CameraIntrinsics {
            focal_x: U::lit(self.focal_x.as_f64()),
            focal_y: U::lit(self.focal_y.as_f64()),
            principal_x: U::lit(self.principal_x.as_f64()),
            principal_y: U::lit(self.principal_y.as_f64()),
            image_width: self.image_width,
            image_height: self.image_height,
        }
    }
}

/// World-to-camera rigid transform: `x_cam = rotation * x_world + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraPose<T: Real> {
    pub rotation: Matrix3<T>,
    pub translation: Vector3<T>,
}

impl<T: Real> CameraPose<T> {
    pub fn identity() -> Self {
        Self { rotation: Matrix3::identity(), translation: Vector3::zeros() }
    }

    /// Checked constructor; the rotation must be orthonormal with det +1 within 1e-9
    /// (1e-5 for single precision).
    pub fn new(rotation: Matrix3<T>, translation: Vector3<T>) -> Result<Self, GeometryError> {
        if !is_rotation(&rotation, rotation_tolerance::<T>()) {
            return Err(GeometryError::InvalidRotation);
        }
        Ok(Self { rotation, translation })
    }

    /// Pose of a camera with the given orientation located at `center`.
    pub fn from_center(rotation: Matrix3<T>, center: &Point3<T>) -> Self {
        let translation = -(rotation * center.coords);
        Self { rotation, translation }
    }

    /// Camera looking from `eye` towards `target`, image y axis pointing along `down`
    /// as closely as possible.
    pub fn look_at(eye: &Point3<T>, target: &Point3<T>, down: &Vector3<T>) -> Self {
        let z = (target - eye).normalize();
        let mut y = down - z * z.dot(down);
        if y.norm() < T::lit(1e-9) {
            let alt = if z.x.abs() < T::lit(0.9) { Vector3::x() } else { Vector3::y() };
            y = alt - z * z.dot(&alt);
        }
        let y = y.normalize();
        let x = y.cross(&z);
        let rotation = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
        Self::from_center(rotation, eye)
    }

    pub fn center(&self) -> Point3<T> {
        Point3::from(-(self.rotation.transpose() * self.translation))
    }

    /// Optical axis in world coordinates.
    pub fn viewing_direction(&self) -> Vector3<T> {
        self.rotation.row(2).transpose()
    }

    pub fn transform(&self, p: &Point3<T>) -> Vector3<T> {
        self.rotation * p.coords + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self { rotation: rt, translation: -(rt * self.translation) }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    /// Rotation as a unit quaternion `[w, x, y, z]` with `w >= 0`.
    pub fn quaternion(&self) -> [T; 4] {
        let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(self.rotation));
        let c = q.into_inner().coords;
        // nalgebra stores (i, j, k, w)
        let (w, x, y, z) = (c[3], c[0], c[1], c[2]);
        if w < T::zero() {
            [-w, -x, -y, -z]
        } else {
            [w, x, y, z]
        }
    }

    pub fn from_quaternion(q: [T; 4], translation: Vector3<T>) -> Self {
        let uq = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(q[0], q[1], q[2], q[3]));
        Self { rotation: uq.to_rotation_matrix().into_inner(), translation }
    }

    pub fn is_valid(&self) -> bool {
        is_rotation(&self.rotation, rotation_tolerance::<T>())
            && self.translation.iter().all(|v| v.is_finite())
    }
}

fn rotation_tolerance<T: Real>() -> T {
    if T::default_epsilon() > T::lit(1e-10) {
        T::lit(1e-5)
    } else {
        T::lit(1e-9)
    }
}

pub(crate) fn is_rotation<T: Real>(r: &Matrix3<T>, tol: T) -> bool {
    let err = (r.transpose() * r - Matrix3::identity()).abs().max();
    err <= tol && (r.determinant() - T::one()).abs() <= tol
}

/// Pinhole projection of a world point. Fails when the point is not in front
/// of the camera.
pub fn project<T: Real>(
    intrinsics: &CameraIntrinsics<T>,
    pose: &CameraPose<T>,
    point: &Point3<T>,
) -> Result<Vector2<T>, GeometryError> {
    let pc = pose.transform(point);
    if !(pc.z > T::zero()) {
        return Err(GeometryError::BehindCamera { depth: pc.z.as_f64() });
    }
    Ok(Vector2::new(
        intrinsics.focal_x * pc.x / pc.z + intrinsics.principal_x,
        intrinsics.focal_y * pc.y / pc.z + intrinsics.principal_y,
    ))
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize<T: Real>(m: &Matrix3<T>) -> Matrix3<T> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("u requested");
    let v_t = svd.v_t.expect("v_t requested");
    let mut r = u * v_t;
    if r.determinant() < T::zero() {
        let mut d = Matrix3::identity();
        d[(2, 2)] = -T::one();
        r = u * d * v_t;
    }
    r
}

/// Rotation matrix from an angle-axis vector.
pub fn exp_so3<T: Real>(w: &Vector3<T>) -> Matrix3<T> {
    Rotation3::new(*w).into_inner()
}

/// Geodesic angle (radians) between two rotations.
pub fn rotation_angle<T: Real>(a: &Matrix3<T>, b: &Matrix3<T>) -> T {
    let rel = a * b.transpose();
    let c = ((rel.trace() - T::one()) * T::lit(0.5)).clamp(-T::one(), T::one());
    c.acos()
}

/// Angle (radians) between two vectors.
pub fn angle_between<T: Real>(a: &Vector3<T>, b: &Vector3<T>) -> T {
    // atan2 form stays accurate for nearly parallel vectors
    let cross = a.cross(b).norm();
    let dot = a.dot(b);
    cross.atan2(dot)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn projects_on_optical_axis() {
        let k = CameraIntrinsics::<f64>::simple(1.0, 0.0, 0.0, 1, 1).unwrap();
        let uv = project(&k, &CameraPose::identity(), &Point3::new(0.0, 0.0, 1.0)).unwrap();
        assert_eq!(uv, Vector2::new(0.0, 0.0));
    }

    #[test]
    fn projects_with_focal_and_principal_point() {
        let k = CameraIntrinsics::<f64>::simple(2.0, 100.0, 100.0, 200, 200).unwrap();
        let uv = project(&k, &CameraPose::identity(), &Point3::new(1.0, 1.0, 2.0)).unwrap();
        // f·x/z + pp = 2·0.5 + 100
        assert_eq!(uv, Vector2::new(101.0, 101.0));
    }

    #[test]
    fn behind_camera_is_an_error() {
        let k = CameraIntrinsics::<f64>::simple(1.0, 0.0, 0.0, 1, 1).unwrap();
        let r = project(&k, &CameraPose::identity(), &Point3::new(0.0, 0.0, -1.0));
        assert!(matches!(r, Err(GeometryError::BehindCamera { .. })));
        let r = project(&k, &CameraPose::identity(), &Point3::new(1.0, 0.0, 0.0));
        assert!(r.is_err());
    }

    #[test]
    fn invalid_intrinsics_rejected() {
        assert!(CameraIntrinsics::<f64>::simple(0.0, 1.0, 1.0, 2, 2).is_err());
        assert!(CameraIntrinsics::<f64>::simple(1.0, 3.0, 1.0, 2, 2).is_err());
    }

    #[test]
    fn matches_step_by_step_projection() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let w = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let r = exp_so3(&w);
            let t = Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(5.0..10.0));
            let pose = CameraPose::new(r, t).unwrap();
            let k = CameraIntrinsics::new(
                rng.gen_range(300.0..900.0),
                rng.gen_range(300.0..900.0),
                rng.gen_range(200.0..400.0),
                rng.gen_range(150.0..300.0),
                640,
                480,
            )
            .unwrap();
            let p = Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));

            // rotate, translate, divide, scale
            let mut xc = [0.0f64; 3];
            for i in 0..3 {
                for j in 0..3 {
                    xc[i] += r[(i, j)] * p[j];
                }
                xc[i] += t[i];
            }
            let (u, v) = (xc[0] / xc[2], xc[1] / xc[2]);
            let expected = (k.focal_x * u + k.principal_x, k.focal_y * v + k.principal_y);

            let got = project(&k, &pose, &p).unwrap();
            assert!((got.x - expected.0).abs() < 1e-9 && (got.y - expected.1).abs() < 1e-9);
        }
    }

    #[test]
    fn quaternion_round_trip_and_center() {
        let r = exp_so3(&Vector3::new(0.3, -0.2, 1.1));
        let pose = CameraPose::new(r, Vector3::new(1.0, 2.0, 3.0)).unwrap();
        let back = CameraPose::from_quaternion(pose.quaternion(), pose.translation);
        assert!((back.rotation - pose.rotation).abs().max() < 1e-12);
        let c = pose.center();
        assert!(pose.transform(&c).norm() < 1e-12);
        let id = pose.compose(&pose.inverse());
        assert!((id.rotation - Matrix3::identity()).abs().max() < 1e-12);
        assert!(id.translation.norm() < 1e-12);
    }

    #[test]
    fn look_at_points_camera_at_target() {
        let eye = Point3::new(3.0f64, -2.0, 10.0);
        let target = Point3::new(0.0, 0.0, 0.0);
        let pose = CameraPose::look_at(&eye, &target, &Vector3::new(0.0, 1.0, 0.0));
        assert!(pose.is_valid());
        let pc = pose.transform(&target);
        assert!(pc.x.abs() < 1e-9 && pc.y.abs() < 1e-9 && pc.z > 0.0);
    }

    #[test]
    fn single_precision_projection() {
        let k = CameraIntrinsics::<f32>::simple(2.0, 100.0, 100.0, 200, 200).unwrap();
        let uv = project(&k, &CameraPose::identity(), &Point3::new(1.0f32, 1.0, 2.0)).unwrap();
        assert!((uv - Vector2::new(101.0f32, 101.0)).norm() < 1e-5);
        let r = orthonormalize(&exp_so3(&Vector3::new(0.1f32, 0.2, 0.3)));
        assert!(CameraPose::new(r, Vector3::zeros()).is_ok());
    }
}
