use nalgebra::{DMatrix, Matrix3, Vector2, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::ransac::{adaptive_iterations, sample};
use super::{triangulate_unchecked, CameraIntrinsics, CameraPose, GeometryError, Sighting};
use crate::Real;

#[derive(Debug, Clone, Copy)]
pub struct TwoViewOptions {
    /// Sampson error threshold in pixels.
    pub threshold_px: f64,
    pub confidence: f64,
    pub max_iterations: usize,
    pub seed: u64,
}

impl Default for TwoViewOptions {
    fn default() -> Self {
        Self { threshold_px: 4.0, confidence: 0.999, max_iterations: 10_000, seed: 0 }
    }
}

/// Relative pose of the second camera with the first at the origin.
#[derive(Debug, Clone)]
pub struct RelativePose<T: Real> {
    /// World-to-camera pose of the second view; `translation` has unit norm.
    pub pose: CameraPose<T>,
    pub essential: Matrix3<T>,
    pub inliers: Vec<bool>,
    pub inlier_count: usize,
}

/// Similarity that moves points to zero mean and mean distance √2.
fn hartley<T: Real>(pts: &[Vector2<T>]) -> Matrix3<T> {
    let n = T::from_count(pts.len());
    let c = pts.iter().fold(Vector2::zeros(), |a, p| a + p) / n;
    let d = pts.iter().map(|p| (p - c).norm()).fold(T::zero(), |a, b| a + b) / n;
    let s = if d > T::zero() { T::lit(std::f64::consts::SQRT_2) / d } else { T::one() };
    let z = T::zero();
    Matrix3::new(s, z, -s * c.x, z, s, -s * c.y, z, z, T::one())
}

fn apply_h<T: Real>(h: &Matrix3<T>, p: &Vector2<T>) -> Vector2<T> {
    Vector2::new(h[(0, 0)] * p.x + h[(0, 2)], h[(1, 1)] * p.y + h[(1, 2)])
}

/// Normalized 8-point estimate of the essential matrix from correspondences in
/// normalized image coordinates. Fails when the design matrix has more than a
/// one-dimensional null space.
pub fn essential_eight_point<T: Real>(x1: &[Vector2<T>], x2: &[Vector2<T>]) -> Result<Matrix3<T>, GeometryError> {
    if x1.len() != x2.len() {
        return Err(GeometryError::LengthMismatch(x1.len(), x2.len()));
    }
    let n = x1.len();
    if n < 8 {
        return Err(GeometryError::NotEnoughData { needed: 8, got: n });
    }
    let t1 = hartley(x1);
    let t2 = hartley(x2);
    let mut a = DMatrix::<T>::zeros(n.max(9), 9);
    for i in 0..n {
        let p = apply_h(&t1, &x1[i]);
        let q = apply_h(&t2, &x2[i]);
        let row = [q.x * p.x, q.x * p.y, q.x, q.y * p.x, q.y * p.y, q.y, p.x, p.y, T::one()];
        for (c, v) in row.iter().enumerate() {
            a[(i, c)] = *v;
        }
    }
    let svd = a.svd(false, true);
    let v_t = svd.v_t.ok_or(GeometryError::Degenerate("svd failed"))?;
    let mut order: Vec<usize> = (0..9).collect();
    order.sort_by(|&i, &j| svd.singular_values[i].partial_cmp(&svd.singular_values[j]).unwrap());
    let (smallest, second) = (order[0], order[1]);
    let largest = svd.singular_values[order[8]];
    if svd.singular_values[second] <= largest * T::lit(1e-9) {
        return Err(GeometryError::Degenerate("epipolar constraints are rank deficient"));
    }
    let f = v_t.row(smallest);
    let e_hat = Matrix3::new(f[0], f[1], f[2], f[3], f[4], f[5], f[6], f[7], f[8]);
    let e = t2.transpose() * e_hat * t1;
    Ok(project_to_essential(&e))
}

fn project_to_essential<T: Real>(e: &Matrix3<T>) -> Matrix3<T> {
    let svd = e.svd(true, true);
    let u = svd.u.unwrap();
    let v_t = svd.v_t.unwrap();
    let d = Matrix3::from_diagonal(&Vector3::new(T::one(), T::one(), T::zero()));
    u * d * v_t
}

/// Sampson distance (pixels) of a pixel correspondence under `essential`.
pub fn sampson_error_px<T: Real>(
    essential: &Matrix3<T>,
    k1: &CameraIntrinsics<T>,
    k2: &CameraIntrinsics<T>,
    p1: &Vector2<T>,
    p2: &Vector2<T>,
) -> T {
    let f = k2.inverse_matrix().transpose() * essential * k1.inverse_matrix();
    sampson_with_f(&f, p1, p2)
}

fn sampson_with_f<T: Real>(f: &Matrix3<T>, p1: &Vector2<T>, p2: &Vector2<T>) -> T {
    let x1 = Vector3::new(p1.x, p1.y, T::one());
    let x2 = Vector3::new(p2.x, p2.y, T::one());
    let fx1 = f * x1;
    let ftx2 = f.transpose() * x2;
    let num = x2.dot(&fx1);
    let den = fx1.x * fx1.x + fx1.y * fx1.y + ftx2.x * ftx2.x + ftx2.y * ftx2.y;
    if den <= T::zero() {
        return T::max_value().unwrap();
    }
    (num * num / den).sqrt()
}

/// The four `(R, t)` factorizations of an essential matrix.
pub fn decompose_essential<T: Real>(e: &Matrix3<T>) -> [(Matrix3<T>, Vector3<T>); 4] {
    let svd = e.svd(true, true);
    let mut u = svd.u.unwrap();
    let mut v_t = svd.v_t.unwrap();
    if u.determinant() < T::zero() {
        u = -u;
    }
    if v_t.determinant() < T::zero() {
        v_t = -v_t;
    }
    let (z, o) = (T::zero(), T::one());
    let w = Matrix3::new(z, -o, z, o, z, z, z, z, o);
    let r1 = u * w * v_t;
    let r2 = u * w.transpose() * v_t;
    let t = u.column(2).into_owned();
    [(r1, t), (r1, -t), (r2, t), (r2, -t)]
}

/// Relative pose from pixel correspondences: 8-point essential matrix inside
/// RANSAC on the Sampson error, then the cheirality-consistent factorization.
pub fn estimate_relative_pose<T: Real>(
    matches: &[(Vector2<T>, Vector2<T>)],
    k1: &CameraIntrinsics<T>,
    k2: &CameraIntrinsics<T>,
    opts: &TwoViewOptions,
) -> Result<RelativePose<T>, GeometryError> {
    let n = matches.len();
    if n < 8 {
        return Err(GeometryError::NotEnoughData { needed: 8, got: n });
    }
    let x1: Vec<_> = matches.iter().map(|m| k1.normalize(&m.0)).collect();
    let x2: Vec<_> = matches.iter().map(|m| k2.normalize(&m.1)).collect();
    let k1_inv = k1.inverse_matrix();
    let k2_inv_t = k2.inverse_matrix().transpose();
    let thr = T::lit(opts.threshold_px);

    let score = |e: &Matrix3<T>| -> (usize, T, Vec<bool>) {
        let f = k2_inv_t * e * k1_inv;
        let mut count = 0;
        let mut sum = T::zero();
        let mask = matches
            .iter()
            .map(|(a, b)| {
                let d = sampson_with_f(&f, a, b);
                let inl = d <= thr;
                if inl {
                    count += 1;
                    sum += d;
                }
                inl
            })
            .collect();
        (count, sum, mask)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut best: Option<(usize, T, Vec<bool>, Matrix3<T>)> = None;
    let mut needed = opts.max_iterations;
    let mut it = 0;
    while it < needed {
        it += 1;
        let idx = sample(&mut rng, n, 8);
        let s1: Vec<_> = idx.iter().map(|&i| x1[i]).collect();
        let s2: Vec<_> = idx.iter().map(|&i| x2[i]).collect();
        let Ok(e) = essential_eight_point(&s1, &s2) else { continue };
        let (count, sum, mask) = score(&e);
        let better = match &best {
            None => true,
            Some((c, s, _, _)) => count > *c || (count == *c && sum < *s),
        };
        if better {
            needed = adaptive_iterations(count as f64 / n as f64, 8, opts.confidence, opts.max_iterations);
            best = Some((count, sum, mask, e));
        }
    }
    let (mut count, _, mut mask, mut e) = best.ok_or(GeometryError::NoConsensus)?;
    if count < 8 {
        return Err(GeometryError::NoConsensus);
    }

    // least-squares refit on the consensus set
    for _ in 0..2 {
        let s1: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| x1[i]).collect();
        let s2: Vec<_> = (0..n).filter(|&i| mask[i]).map(|i| x2[i]).collect();
        let refit = essential_eight_point(&s1, &s2)?;
        let (c, _, m) = score(&refit);
        if c >= count {
            count = c;
            mask = m;
            e = refit;
        } else {
            break;
        }
    }

    let origin = CameraPose::identity();
    let mut best_pose = None;
    let mut best_front = 0usize;
    for (r, t) in decompose_essential(&e) {
        let cand = CameraPose { rotation: r, translation: t };
        let front = (0..n)
            .filter(|&i| mask[i])
            .filter(|&i| {
                let s = [Sighting::new(*k1, origin, matches[i].0), Sighting::new(*k2, cand, matches[i].1)];
                match triangulate_unchecked(&s) {
                    Ok(x) => x.z > T::zero() && cand.transform(&x).z > T::zero(),
                    Err(_) => false,
                }
            })
            .count();
        if front > best_front {
            best_front = front;
            best_pose = Some(cand);
        }
    }
    let pose = best_pose.ok_or(GeometryError::Cheirality)?;
    if 2 * best_front <= count {
        return Err(GeometryError::Cheirality);
    }
    let pose = CameraPose { rotation: pose.rotation, translation: pose.translation.normalize() };
    Ok(RelativePose { pose, essential: e, inliers: mask, inlier_count: count })
}
