use nalgebra::{DMatrix, Matrix3, Matrix3x4, Matrix4, Matrix6, Point3, Vector2, Vector3, Vector6};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ba::{residual_and_jacobians, retract_pose};
use super::ransac::{adaptive_iterations, sample};
use super::p3p::p3p;
use super::{project, CameraIntrinsics, CameraPose, GeometryError};
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct ResectionOptions {
    /// Reprojection threshold in pixels.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub refine_iterations: usize,
    pub seed: u64,
}

impl Default for ResectionOptions {
    fn default() -> Self {
        Self { threshold_px: 4.0, confidence: 0.999, max_iterations: 2_000, refine_iterations: 20, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct Resection<T: Real> {
    pub pose: CameraPose<T>,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

fn is_planar<T: Real>(points: &[Point3<T>]) -> bool {
    let n = T::from_count(points.len());
    let c = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / n;
    let mut scatter = Matrix3::zeros();
    for p in points {
        let d = p.coords - c;
        scatter += d * d.transpose();
    }
    let ev = scatter.symmetric_eigenvalues();
    let max = ev.max();
    let min = ev.min();
    !(max > T::zero()) || min <= max * T::lit(1e-10)
}

/// Linear pose from ≥6 world points and their normalized image coordinates.
fn dlt_pose<T: Real>(points: &[Point3<T>], normalized: &[Vector2<T>]) -> Result<CameraPose<T>, GeometryError> {
    let n = points.len();
    if n < 6 {
        return Err(GeometryError::NotEnoughData { needed: 6, got: n });
    }
    if is_planar(points) {
        return Err(GeometryError::Degenerate("coplanar correspondences"));
    }
    let nf = T::from_count(n);
    let c3 = points.iter().fold(Vector3::zeros(), |a, p| a + p.coords) / nf;
    let d3 = points.iter().map(|p| (p.coords - c3).norm()).fold(T::zero(), |a, b| a + b) / nf;
    let s3 = T::lit(3f64.sqrt()) / d3;
    let c2 = normalized.iter().fold(Vector2::zeros(), |a, p| a + p) / nf;
    let d2 = normalized.iter().map(|p| (p - c2).norm()).fold(T::zero(), |a, b| a + b) / nf;
    let s2 = if d2 > T::zero() { T::lit(2f64.sqrt()) / d2 } else { T::one() };

    let mut a = DMatrix::<T>::zeros((2 * n).max(12), 12);
    for i in 0..n {
        let x = (points[i].coords - c3) * s3;
        let xh = [x.x, x.y, x.z, T::one()];
        let uv = (normalized[i] - c2) * s2;
        for k in 0..4 {
            a[(2 * i, k)] = xh[k];
            a[(2 * i, 8 + k)] = -uv.x * xh[k];
            a[(2 * i + 1, 4 + k)] = xh[k];
            a[(2 * i + 1, 8 + k)] = -uv.y * xh[k];
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let mut order: Vec<usize> = (0..12).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].partial_cmp(&svd.singular_values[j]).unwrap());
    if svd.singular_values[order[1]] <= svd.singular_values[order[11]] * T::lit(1e-10) {
        return Err(GeometryError::Degenerate("resection system is rank deficient"));
    }
    let h = v_t.row(order[0]);
    let p_hat = Matrix3x4::from_fn(|r, c| h[4 * r + c]);

    let z = T::zero();
    let o = T::one();
    let t2_inv = Matrix3::new(o / s2, z, c2.x, z, o / s2, c2.y, z, z, o);
    let t3 = Matrix4::new(
        s3, z, z, -s3 * c3.x,
        z, s3, z, -s3 * c3.y,
        z, z, s3, -s3 * c3.z,
        z, z, z, o,
    );
    let mut p = t2_inv * p_hat * t3;
    let m: Matrix3<T> = p.fixed_view::<3, 3>(0, 0).into_owned();
    if m.determinant() < T::zero() {
        p = -p;
    }
    let m: Matrix3<T> = p.fixed_view::<3, 3>(0, 0).into_owned();
    let svd = m.svd(true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let scale = svd.singular_values.sum() / T::lit(3.0);
    if !(scale > T::zero()) {
        return Err(GeometryError::Degenerate("zero scale in resection"));
    }
    let rotation = u * v_t;
    let translation = p.column(3) / scale;
    Ok(CameraPose { rotation, translation })
}

/// LM refinement of a single camera pose on reprojection error.
pub(crate) fn refine_pose<T: Real>(
    intrinsics: &CameraIntrinsics<T>,
    points: &[Point3<T>],
    pixels: &[Vector2<T>],
    mut pose: CameraPose<T>,
    iterations: usize,
) -> CameraPose<T> {
    let cost_of = |pose: &CameraPose<T>| -> Option<T> {
        let mut c = T::zero();
        for (x, px) in points.iter().zip(pixels) {
            c += (project(intrinsics, pose, x).ok()? - px).norm_squared();
        }
        Some(c)
    };
    let Some(mut cost) = cost_of(&pose) else { return pose };
    let mut lambda = T::lit(1e-4);
    for _ in 0..iterations {
        let mut h = Matrix6::zeros();
        let mut g = Vector6::zeros();
        for (x, px) in points.iter().zip(pixels) {
            if let Some((r, jc, _)) = residual_and_jacobians(intrinsics, &pose, x, px) {
                h += jc.transpose() * jc;
                g += jc.transpose() * r;
            }
        }
        let mut improved = false;
        for _ in 0..10 {
            let mut hd = h;
            for k in 0..6 {
                hd[(k, k)] += lambda * h[(k, k)].max(T::lit(1e-12));
            }
            let Some(step) = hd.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= T::lit(10.0);
                continue;
            };
            let cand = retract_pose(&pose, &step);
            match cost_of(&cand) {
                Some(c) if c < cost => {
                    let small = step.norm() < T::lit(1e-14);
                    pose = cand;
                    cost = c;
                    lambda = (lambda * T::lit(0.1)).max(T::lit(1e-12));
                    improved = !small;
                    break;
                }
                _ => lambda *= T::lit(10.0),
            }
        }
        if !improved {
            break;
        }
    }
    pose
}

/// Camera pose from 3D–2D correspondences. Hypotheses come from P3P inside
/// RANSAC on the reprojection error; the inliers get a DLT refit and LM.
/// Fewer than 6 points, or a coplanar set, is refused.
pub fn resect_camera<T: Real>(
    correspondences: &[(Point3<T>, Vector2<T>)],
    intrinsics: &CameraIntrinsics<T>,
    opts: &ResectionOptions,
) -> Result<Resection<T>, GeometryError> {
    let n = correspondences.len();
    if n < 6 {
        return Err(GeometryError::NotEnoughData { needed: 6, got: n });
    }
    let points: Vec<Point3<T>> = correspondences.iter().map(|c| c.0).collect();
    let pixels: Vec<Vector2<T>> = correspondences.iter().map(|c| c.1).collect();
    if is_planar(&points) {
        return Err(GeometryError::Degenerate("coplanar correspondences"));
    }
    let normalized: Vec<Vector2<T>> = pixels.iter().map(|p| intrinsics.normalize(p)).collect();
    let thr2 = T::lit(opts.threshold_px * opts.threshold_px);

    let score = |pose: &CameraPose<T>| -> (usize, T, Vec<bool>) {
        let mut count = 0;
        let mut sum = T::zero();
        let mask = points
            .iter()
            .zip(&pixels)
            .map(|(x, px)| match project(intrinsics, pose, x) {
                Ok(uv) => {
                    let e = (uv - px).norm_squared();
                    if e <= thr2 {
                        count += 1;
                        sum += e;
                        true
                    } else {
                        false
                    }
                }
                Err(_) => false,
            })
            .collect();
        (count, sum, mask)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, T, Vec<bool>, CameraPose<T>)> = None;
    let mut needed = opts.max_iterations;
    let mut it = 0;
    while it < needed {
        it += 1;
        let idx = sample(&mut rng, n, 3);
        let sp: [Point3<T>; 3] = std::array::from_fn(|k| points[idx[k]]);
        let sb: [Vector3<T>; 3] = std::array::from_fn(|k| {
            let u = normalized[idx[k]];
            Vector3::new(u.x, u.y, T::one())
        });
        for pose in p3p(&sp, &sb) {
            let (count, sum, mask) = score(&pose);
            let better = match &best {
                None => count > 0,
                Some((c, s, _, _)) => count > *c || (count == *c && sum < *s),
            };
            if better {
                needed = adaptive_iterations(count as f64 / n as f64, 3, opts.confidence, opts.max_iterations);
                best = Some((count, sum, mask, pose));
            }
        }
    }
    let (count, _, mask, mut pose) = best.ok_or(GeometryError::NoConsensus)?;
    if count < 6 {
        return Err(GeometryError::NoConsensus);
    }

    let select = |mask: &[bool]| -> (Vec<Point3<T>>, Vec<Vector2<T>>, Vec<Vector2<T>>) {
        let idx: Vec<usize> = (0..n).filter(|&i| mask[i]).collect();
        (
            idx.iter().map(|&i| points[i]).collect(),
            idx.iter().map(|&i| pixels[i]).collect(),
            idx.iter().map(|&i| normalized[i]).collect(),
        )
    };
    let (ip, ipx, inn) = select(&mask);
    if let Ok(refit) = dlt_pose(&ip, &inn) {
        if score(&refit).0 >= count {
            pose = refit;
        }
    }
    pose = refine_pose(intrinsics, &ip, &ipx, pose, opts.refine_iterations);
    let (_, _, mask) = score(&pose);
    let (ip, ipx, _) = select(&mask);
    if ip.len() < 6 {
        return Err(GeometryError::NoConsensus);
    }
    pose = refine_pose(intrinsics, &ip, &ipx, pose, opts.refine_iterations);
    let (count, _, mask) = score(&pose);
    if count < 6 {
        return Err(GeometryError::NoConsensus);
    }
    Ok(Resection { pose, inliers: mask, inlier_count: count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, rotation_angle};
    use rand::Rng;

    fn k() -> CameraIntrinsics<f64> {
        CameraIntrinsics::simple(700.0, 500.0, 375.0, 1000, 750).unwrap()
    }

    fn truth(rng: &mut ChaCha8Rng) -> CameraPose<f64> {
        let r = exp_so3(&Vector3::new(rng.gen_range(-0.3..0.3), rng.gen_range(-0.3..0.3), rng.gen_range(-3.0..3.0)));
        CameraPose::from_center(r, &Point3::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0), -12.0))
    }

    fn visible(rng: &mut ChaCha8Rng, pose: &CameraPose<f64>, n: usize) -> Vec<(Point3<f64>, Vector2<f64>)> {
        let mut out = Vec::new();
        while out.len() < n {
            let x = Point3::new(rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0), rng.gen_range(-2.0..2.0));
            if let Ok(px) = project(&k(), pose, &x) {
                if px.x >= 0.0 && px.x < 1000.0 && px.y >= 0.0 && px.y < 750.0 {
                    out.push((x, px));
                }
            }
        }
        out
    }

    #[test]
    fn exact_correspondences_recover_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let t = truth(&mut rng);
            let c = visible(&mut rng, &t, 40);
            let est = resect_camera(&c, &k(), &ResectionOptions::default()).unwrap();
            assert_eq!(est.inlier_count, 40);
            assert!(rotation_angle(&est.pose.rotation, &t.rotation) < 1e-6);
            assert!((est.pose.center() - t.center()).norm() < 1e-6);
        }
    }

    #[test]
    fn classifies_outliers() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = truth(&mut rng);
        let mut c = visible(&mut rng, &t, 100);
        let mut labels = vec![true; 100];
        for i in 0..30 {
            c[i].1 = Vector2::new(rng.gen_range(0.0..1000.0), rng.gen_range(0.0..750.0));
            labels[i] = false;
        }
        let est = resect_camera(&c, &k(), &ResectionOptions::default()).unwrap();
        let correct = labels.iter().zip(&est.inliers).filter(|(a, b)| a == b).count();
        assert!(correct >= 95, "{correct}");
    }

    #[test]
    fn five_correspondences_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = truth(&mut rng);
        let c = visible(&mut rng, &t, 5);
        assert_eq!(
            resect_camera(&c, &k(), &ResectionOptions::default()).unwrap_err(),
            GeometryError::NotEnoughData { needed: 6, got: 5 }
        );
    }

    #[test]
    fn coplanar_set_rejected() {
        let t = CameraPose::from_center(Matrix3::identity(), &Point3::new(0.0, 0.0, -10.0));
        let c: Vec<_> = (0..20)
            .map(|i| {
                let x = Point3::new((i % 5) as f64 - 2.0, (i / 5) as f64 - 2.0, 0.0);
                (x, project(&k(), &t, &x).unwrap())
            })
            .collect();
        assert!(matches!(resect_camera(&c, &k(), &ResectionOptions::default()), Err(GeometryError::Degenerate(_))));
    }
}
