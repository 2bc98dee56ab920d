use nalgebra::{DMatrix, Point3, Vector2};

use super::{angle_between, project, CameraIntrinsics, CameraPose, GeometryError};
use crate::Real;

/// One observation of a point: the observing camera and the measured pixel.
#[derive(Debug, Clone, Copy)]
pub struct Sighting<T: Real> {
    pub intrinsics: CameraIntrinsics<T>,
    pub pose: CameraPose<T>,
    pub pixel: Vector2<T>,
}

impl<T: Real> Sighting<T> {
    pub fn new(intrinsics: CameraIntrinsics<T>, pose: CameraPose<T>, pixel: Vector2<T>) -> Self {
        Self { intrinsics, pose, pixel }
    }
}

/// Linear (DLT) multi-view triangulation.
///
/// Rejects configurations whose largest pairwise viewing-ray angle is below
/// `min_angle` (radians) and points that end up behind any observing camera.
pub fn triangulate<T: Real>(sightings: &[Sighting<T>], min_angle: T) -> Result<Point3<T>, GeometryError> {
    if sightings.len() < 2 {
        return Err(GeometryError::NotEnoughData { needed: 2, got: sightings.len() });
    }
    let rays: Vec<_> = sightings
        .iter()
        .map(|s| s.pose.rotation.transpose() * s.intrinsics.ray(&s.pixel))
        .collect();
    let mut max_angle = T::zero();
    for i in 0..rays.len() {
        for j in i + 1..rays.len() {
            let a = angle_between(&rays[i], &rays[j]);
            if a > max_angle {
                max_angle = a;
            }
        }
    }
    if max_angle < min_angle {
        return Err(GeometryError::Degenerate("viewing rays nearly parallel"));
    }
    let x = triangulate_unchecked(sightings)?;
    for s in sightings {
        if !(s.pose.transform(&x).z > T::zero()) {
            return Err(GeometryError::Cheirality);
        }
    }
    Ok(x)
}

/// DLT solve only: no angle or cheirality checks.
pub fn triangulate_unchecked<T: Real>(sightings: &[Sighting<T>]) -> Result<Point3<T>, GeometryError> {
    let n = sightings.len();
    if n < 2 {
        return Err(GeometryError::NotEnoughData { needed: 2, got: n });
    }
    let mut a = DMatrix::<T>::zeros(2 * n, 4);
    for (i, s) in sightings.iter().enumerate() {
        let m = s.intrinsics.normalize(&s.pixel);
        let r = &s.pose.rotation;
        let t = &s.pose.translation;
        // rows of the 3x4 projection [R | t]
        let row = |k: usize| [r[(k, 0)], r[(k, 1)], r[(k, 2)], t[k]];
        let (p0, p1, p2) = (row(0), row(1), row(2));
        // each row is unit-free already (normalized coordinates), but scale the
        // equations so every camera contributes comparably
        let w = T::one() / (p2[0] * p2[0] + p2[1] * p2[1] + p2[2] * p2[2]).sqrt();
        for c in 0..4 {
            a[(2 * i, c)] = (m.x * p2[c] - p0[c]) * w;
            a[(2 * i + 1, c)] = (m.y * p2[c] - p1[c]) * w;
        }
    }
    // null vector of A via the eigen decomposition of the 4x4 normal matrix
    // would square the condition number; use the SVD of A.
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let (idx, _) = svd
        .singular_values
        .iter()
        .enumerate()
        .fold((0, T::max_value().unwrap()), |acc, (i, &v)| if v < acc.1 { (i, v) } else { acc });
    let h = v_t.row(idx);
    if h[3].abs() <= T::default_epsilon() * h.norm() {
        return Err(GeometryError::Degenerate("point at infinity"));
    }
    Ok(Point3::new(h[0] / h[3], h[1] / h[3], h[2] / h[3]))
}

/// Root mean square reprojection error of a point over its sightings.
pub fn rms_reprojection<T: Real>(point: &Point3<T>, sightings: &[Sighting<T>]) -> Option<T> {
    let mut sum = T::zero();
    for s in sightings {
        let uv = project(&s.intrinsics, &s.pose, point).ok()?;
        sum += (uv - s.pixel).norm_squared();
    }
    Some((sum / T::from_count(sightings.len())).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix3, Vector3};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::simple(800.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn stereo() -> (CameraPose<f64>, CameraPose<f64>) {
        let target = Point3::new(0.0, 0.0, 5.0);
        let up = Vector3::new(0.0, 1.0, 0.0);
        (
            CameraPose::look_at(&Point3::new(-1.0, 0.0, 0.0), &target, &up),
            CameraPose::look_at(&Point3::new(1.0, 0.0, 0.0), &target, &up),
        )
    }

    fn sight(pose: CameraPose<f64>, x: &Point3<f64>) -> Sighting<f64> {
        Sighting::new(k(), pose, project(&k(), &pose, x).unwrap())
    }

    #[test]
    fn recovers_exact_point() {
        let (a, b) = stereo();
        let x = Point3::new(0.0, 0.0, 5.0);
        let got = triangulate(&[sight(a, &x), sight(b, &x)], 2f64.to_radians()).unwrap();
        assert!((got - x).norm() < 1e-9);
    }

    #[test]
    fn identical_poses_are_degenerate() {
        let (a, _) = stereo();
        let x = Point3::new(0.0, 0.0, 5.0);
        let r = triangulate(&[sight(a, &x), sight(a, &x)], 2f64.to_radians());
        assert!(matches!(r, Err(GeometryError::Degenerate(_))));
    }

    #[test]
    fn point_behind_cameras_fails_cheirality() {
        // rays pointing away from each other intersect behind both cameras
        let a = CameraPose::from_center(Matrix3::identity(), &Point3::new(-1.0, 0.0, 0.0));
        let b = CameraPose::from_center(Matrix3::identity(), &Point3::new(1.0, 0.0, 0.0));
        let sa = Sighting::new(k(), a, k().denormalize(&Vector2::new(-0.2, 0.0)));
        let sb = Sighting::new(k(), b, k().denormalize(&Vector2::new(0.2, 0.0)));
        assert_eq!(triangulate(&[sa, sb], 0.01), Err(GeometryError::Cheirality));
    }

    /// Gauss-Newton minimisation of the two-view reprojection error, coded
    /// independently of the DLT path (numeric Jacobian).
    fn nonlinear_oracle(s: &[Sighting<f64>], init: Point3<f64>) -> Point3<f64> {
        let res = |p: &Point3<f64>| -> Vec<f64> {
            s.iter()
                .flat_map(|si| {
                    let pc = si.pose.rotation * p.coords + si.pose.translation;
                    let u = si.intrinsics.focal_x * pc.x / pc.z + si.intrinsics.principal_x;
                    let v = si.intrinsics.focal_y * pc.y / pc.z + si.intrinsics.principal_y;
                    [u - si.pixel.x, v - si.pixel.y]
                })
                .collect()
        };
        let mut p = init;
        for _ in 0..20 {
            let r0 = res(&p);
            let mut j = DMatrix::zeros(r0.len(), 3);
            for c in 0..3 {
                let mut q = p;
                q[c] += 1e-6;
                let mut m = p;
                m[c] -= 1e-6;
                let (rq, rm) = (res(&q), res(&m));
                for i in 0..r0.len() {
                    j[(i, c)] = (rq[i] - rm[i]) / 2e-6;
                }
            }
            let r = nalgebra::DVector::from_vec(r0);
            let jt = j.transpose();
            let step = (&jt * &j).lu().solve(&(-(jt * r))).unwrap();
            p += Vector3::new(step[0], step[1], step[2]);
            if step.norm() < 1e-12 {
                break;
            }
        }
        p
    }

    #[test]
    fn noisy_error_within_monte_carlo_bound() {
        let (a, b) = stereo();
        let x = Point3::new(0.3, -0.2, 5.0);
        let noise = Normal::new(0.0, 0.5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut dlt_err = Vec::new();
        let mut oracle_err = Vec::new();
        for _ in 0..300 {
            let mut sa = sight(a, &x);
            let mut sb = sight(b, &x);
            sa.pixel += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            sb.pixel += Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            let d = triangulate(&[sa, sb], 2f64.to_radians()).unwrap();
            let o = nonlinear_oracle(&[sa, sb], x);
            dlt_err.push((d - x).norm());
            oracle_err.push((o - x).norm());
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        let oracle_max = oracle_err.iter().cloned().fold(0.0, f64::max);
        // two-view DLT and the ML estimate differ by second order effects only
        assert!(mean(&dlt_err) <= 1.05 * mean(&oracle_err), "{} vs {}", mean(&dlt_err), mean(&oracle_err));
        assert!(dlt_err.iter().all(|&e| e <= 1.5 * oracle_max));
    }

    #[test]
    fn round_trip_many_views() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let target = Point3::new(0.0, 0.0, 0.0);
        for _ in 0..100 {
            let views: Vec<_> = (0..4)
                .map(|_| {
                    let eye = Point3::new(rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0), rng.gen_range(8.0..12.0));
                    CameraPose::look_at(&eye, &target, &Vector3::new(0.0, 1.0, 0.0))
                })
                .collect();
            let x = Point3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            let s: Vec<_> = views.iter().map(|&p| sight(p, &x)).collect();
            match triangulate(&s, 0.5f64.to_radians()) {
                Ok(got) => assert!((got - x).norm() < 1e-9 * 10.0),
                Err(GeometryError::Degenerate(_)) => {}
                Err(e) => panic!("{e}"),
            }
        }
    }
}
