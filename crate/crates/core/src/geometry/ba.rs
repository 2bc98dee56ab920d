//! Levenberg–Marquardt bundle adjustment with fixed intrinsics.
//!
//! The normal equations are reduced to the camera block with the Schur
//! complement of the (block diagonal) point block and solved densely. Camera
//! rotations are updated by left-multiplying an angle-axis increment onto the
//! stored matrix; translations and points are updated additively.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector, Matrix2x3, Matrix3, Matrix6, Matrix6x3, Point3, SMatrix, Vector2, Vector3, Vector6};

use super::{exp_so3, CameraIntrinsics, CameraPose};
use crate::{ImageId, PointId, Real};

pub type Matrix2x6<T> = SMatrix<T, 2, 6>;

#[derive(Debug, Clone)]
pub struct BaCamera<T: Real> {
    pub intrinsics: CameraIntrinsics<T>,
    pub pose: CameraPose<T>,
    /// Free flags for `[ωx, ωy, ωz, tx, ty, tz]`.
    pub free: [bool; 6],
}

impl<T: Real> BaCamera<T> {
    pub fn free(intrinsics: CameraIntrinsics<T>, pose: CameraPose<T>) -> Self {
        Self { intrinsics, pose, free: [true; 6] }
    }

    pub fn fixed(intrinsics: CameraIntrinsics<T>, pose: CameraPose<T>) -> Self {
        Self { intrinsics, pose, free: [false; 6] }
    }

    fn is_free(&self) -> bool {
        self.free.iter().any(|&f| f)
    }
}

#[derive(Debug, Clone)]
pub struct BaPoint<T: Real> {
    pub position: Point3<T>,
    pub fixed: bool,
}

#[derive(Debug, Clone)]
pub struct BaObservation<T: Real> {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<T>,
}

#[derive(Debug, Clone, Default)]
pub struct BaProblem<T: Real> {
    pub cameras: Vec<BaCamera<T>>,
    pub points: Vec<BaPoint<T>>,
    pub observations: Vec<BaObservation<T>>,
}

#[derive(Debug, Clone)]
pub struct BaOptions {
    pub max_iterations: usize,
    /// Stop when the largest gradient component falls below this.
    pub gradient_tolerance: f64,
    /// Stop when `|δ| <= tol · (|x| + tol)`.
    pub parameter_tolerance: f64,
    /// Stop when an accepted step lowers the cost by less than this fraction.
    pub function_tolerance: f64,
    /// Intrinsics are never optimized; kept for interface completeness.
    pub fix_intrinsics: bool,
    /// Points whose coordinates are held constant (ground control).
    pub fixed_point_ids: Option<BTreeSet<PointId>>,
    /// Cameras held constant in addition to the gauge camera.
    pub fixed_image_ids: BTreeSet<ImageId>,
    /// Hold the first registered camera and one translation component of the
    /// second constant. Disabled automatically when fixed points are given.
    pub fix_gauge: bool,
}

impl Default for BaOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            gradient_tolerance: 1e-10,
            parameter_tolerance: 1e-10,
            function_tolerance: 1e-10,
            fix_intrinsics: true,
            fixed_point_ids: None,
            fixed_image_ids: BTreeSet::new(),
            fix_gauge: true,
        }
    }
}

impl BaOptions {
    pub fn with_max_iterations(mut self, n: usize) -> Self {
        self.max_iterations = n.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct BaReport {
    pub initial_cost: f64,
    pub final_cost: f64,
    pub initial_mean_error: f64,
    pub final_mean_error: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Observations used (those in front of their camera at the start).
    pub observations: usize,
}

impl BaReport {
    fn empty() -> Self {
        Self {
            initial_cost: 0.0,
            final_cost: 0.0,
            initial_mean_error: 0.0,
            final_mean_error: 0.0,
            iterations: 0,
            converged: true,
            observations: 0,
        }
    }
}

/// Reprojection residual `project(pose, point) - pixel` with its Jacobians
/// with respect to the camera increment `[ω, t]` and the point. `None` when the
/// point is not in front of the camera.
pub fn residual_and_jacobians<T: Real>(
    intrinsics: &CameraIntrinsics<T>,
    pose: &CameraPose<T>,
    point: &Point3<T>,
    pixel: &Vector2<T>,
) -> Option<(Vector2<T>, Matrix2x6<T>, Matrix2x3<T>)> {
    let rx = pose.rotation * point.coords;
    let p = rx + pose.translation;
    if !(p.z > T::zero()) {
        return None;
    }
    let (fx, fy) = (intrinsics.focal_x, intrinsics.focal_y);
    let iz = T::one() / p.z;
    let r = Vector2::new(fx * p.x * iz + intrinsics.principal_x - pixel.x, fy * p.y * iz + intrinsics.principal_y - pixel.y);
    let z = T::zero();
    let d_proj = Matrix2x3::new(fx * iz, z, -fx * p.x * iz * iz, z, fy * iz, -fy * p.y * iz * iz);
    // d(exp(ω) R X)/dω at ω = 0 is -[R X]×
    let neg_skew = Matrix3::new(z, rx.z, -rx.y, -rx.z, z, rx.x, rx.y, -rx.x, z);
    let mut jc = Matrix2x6::zeros();
    jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&(d_proj * neg_skew));
    jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_proj);
    let jp = d_proj * pose.rotation;
    Some((r, jc, jp))
}

/// Applies a camera increment `[ω, t]` the same way the solver does.
pub fn retract_pose<T: Real>(pose: &CameraPose<T>, delta: &Vector6<T>) -> CameraPose<T> {
    let w = Vector3::new(delta[0], delta[1], delta[2]);
    CameraPose {
        rotation: exp_so3(&w) * pose.rotation,
        translation: pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
    }
}

fn observation_error<T: Real>(problem: &BaProblem<T>, o: &BaObservation<T>) -> Option<T> {
    let cam = &problem.cameras[o.camera];
    let p = cam.pose.transform(&problem.points[o.point].position);
    if !(p.z > T::zero()) {
        return None;
    }
    let u = cam.intrinsics.focal_x * p.x / p.z + cam.intrinsics.principal_x;
    let v = cam.intrinsics.focal_y * p.y / p.z + cam.intrinsics.principal_y;
    Some((Vector2::new(u, v) - o.pixel).norm_squared())
}

/// Sum of squared residuals over `active` observations; infinite when any of
/// them is behind its camera.
fn total_cost<T: Real>(problem: &BaProblem<T>, active: &[usize]) -> (f64, f64) {
    let mut cost = 0.0;
    let mut err = 0.0;
    for &i in active {
        match observation_error(problem, &problem.observations[i]) {
            Some(e2) => {
                let e2 = e2.as_f64();
                cost += e2;
                err += e2.sqrt();
            }
            None => return (f64::INFINITY, f64::INFINITY),
        }
    }
    (cost, err / active.len().max(1) as f64)
}

/// Runs LM on `problem` in place. Accepted steps never increase the cost.
pub fn solve<T: Real>(problem: &mut BaProblem<T>, opts: &BaOptions) -> BaReport {
    let active: Vec<usize> = (0..problem.observations.len())
        .filter(|&i| observation_error(problem, &problem.observations[i]).is_some())
        .collect();
    if active.is_empty() {
        return BaReport::empty();
    }
    let (cost0, err0) = total_cost(problem, &active);

    let mut cam_slot = vec![None; problem.cameras.len()];
    let mut n_cams = 0;
    for (i, c) in problem.cameras.iter().enumerate() {
        if c.is_free() {
            cam_slot[i] = Some(n_cams);
            n_cams += 1;
        }
    }
    let mut obs_by_point: Vec<Vec<usize>> = vec![Vec::new(); problem.points.len()];
    for &i in &active {
        obs_by_point[problem.observations[i].point].push(i);
    }
    let mut pt_slot = vec![None; problem.points.len()];
    let mut n_pts = 0;
    for (i, p) in problem.points.iter().enumerate() {
        if !p.fixed && !obs_by_point[i].is_empty() {
            pt_slot[i] = Some(n_pts);
            n_pts += 1;
        }
    }
    if n_cams == 0 && n_pts == 0 {
        return BaReport {
            initial_cost: cost0,
            final_cost: cost0,
            initial_mean_error: err0,
            final_mean_error: err0,
            iterations: 0,
            converged: true,
            observations: active.len(),
        };
    }

    let mut lambda = 1e-4;
    let mut cost = cost0;
    let mut iterations = 0;
    let mut converged = false;

    let mut u = vec![Matrix6::<T>::zeros(); n_cams];
    let mut gc = vec![Vector6::<T>::zeros(); n_cams];
    let mut v = vec![Matrix3::<T>::zeros(); n_pts];
    let mut gp = vec![Vector3::<T>::zeros(); n_pts];
    let mut w: Vec<Matrix6x3<T>> = vec![Matrix6x3::zeros(); problem.observations.len()];

    'outer: while iterations < opts.max_iterations {
        iterations += 1;
        u.iter_mut().for_each(|m| *m = Matrix6::zeros());
        gc.iter_mut().for_each(|m| *m = Vector6::zeros());
        v.iter_mut().for_each(|m| *m = Matrix3::zeros());
        gp.iter_mut().for_each(|m| *m = Vector3::zeros());

        for &i in &active {
            let o = &problem.observations[i];
            let cam = &problem.cameras[o.camera];
            let pt = &problem.points[o.point];
            let Some((r, jc, jp)) = residual_and_jacobians(&cam.intrinsics, &cam.pose, &pt.position, &o.pixel) else {
                continue;
            };
            let cs = cam_slot[o.camera];
            let ps = pt_slot[o.point];
            if let Some(c) = cs {
                let mut jc = jc;
                for (k, &f) in cam.free.iter().enumerate() {
                    if !f {
                        jc.column_mut(k).fill(T::zero());
                    }
                }
                u[c] += jc.transpose() * jc;
                gc[c] += jc.transpose() * r;
                if ps.is_some() {
                    w[i] = jc.transpose() * jp;
                }
            }
            if let Some(p) = ps {
                v[p] += jp.transpose() * jp;
                gp[p] += jp.transpose() * r;
            }
        }

        let gmax = gc
            .iter()
            .flat_map(|g| g.iter().cloned())
            .chain(gp.iter().flat_map(|g| g.iter().cloned()))
            .fold(0.0f64, |a, b| a.max(b.as_f64().abs()));
        if gmax <= opts.gradient_tolerance {
            converged = true;
            break;
        }

        let x_norm = parameter_norm(problem, &cam_slot, &pt_slot);

        loop {
            let lam = T::lit(lambda);
            let damp3 = |m: &Matrix3<T>| {
                let mut d = *m;
                for k in 0..3 {
                    d[(k, k)] += lam * m[(k, k)].max(T::lit(1e-9));
                }
                d
            };
            let v_inv: Vec<Matrix3<T>> = v
                .iter()
                .map(|m| damp3(m).try_inverse().unwrap_or_else(Matrix3::zeros))
                .collect();

            let mut delta_c = DVector::<T>::zeros(6 * n_cams);
            if n_cams > 0 {
                let dim = 6 * n_cams;
                let mut s = DMatrix::<T>::zeros(dim, dim);
                let mut rhs = DVector::<T>::zeros(dim);
                for (ci, cam) in problem.cameras.iter().enumerate() {
                    let Some(c) = cam_slot[ci] else { continue };
                    let mut d = u[c];
                    for k in 0..6 {
                        if cam.free[k] {
                            d[(k, k)] += lam * u[c][(k, k)].max(T::lit(1e-9));
                        } else {
                            d[(k, k)] = T::one();
                        }
                    }
                    s.fixed_view_mut::<6, 6>(6 * c, 6 * c).copy_from(&d);
                    rhs.fixed_rows_mut::<6>(6 * c).copy_from(&(-gc[c]));
                }
                for (pi, obs) in obs_by_point.iter().enumerate() {
                    let Some(p) = pt_slot[pi] else { continue };
                    let free_obs: Vec<(usize, usize)> = obs
                        .iter()
                        .filter_map(|&o| cam_slot[problem.observations[o].camera].map(|c| (o, c)))
                        .collect();
                    let ys: Vec<Matrix6x3<T>> = free_obs.iter().map(|&(o, _)| w[o] * v_inv[p]).collect();
                    for (a, &(_, ca)) in free_obs.iter().enumerate() {
                        let mut r = rhs.fixed_rows_mut::<6>(6 * ca);
                        r += ys[a] * gp[p];
                        for &(ob, cb) in free_obs.iter() {
                            let mut blk = s.fixed_view_mut::<6, 6>(6 * ca, 6 * cb);
                            blk -= ys[a] * w[ob].transpose();
                        }
                    }
                }
                match s.cholesky() {
                    Some(ch) => delta_c = ch.solve(&rhs),
                    None => {
                        lambda *= 10.0;
                        if lambda > 1e16 {
                            break 'outer;
                        }
                        continue;
                    }
                }
            }

            let mut delta_p = vec![Vector3::<T>::zeros(); n_pts];
            for (pi, obs) in obs_by_point.iter().enumerate() {
                let Some(p) = pt_slot[pi] else { continue };
                let mut rhs = -gp[p];
                for &o in obs {
                    if let Some(c) = cam_slot[problem.observations[o].camera] {
                        let dc: Vector6<T> = delta_c.fixed_rows::<6>(6 * c).into_owned();
                        rhs -= w[o].transpose() * dc;
                    }
                }
                delta_p[p] = v_inv[p] * rhs;
            }

            let step_norm = (delta_c.norm_squared().as_f64()
                + delta_p.iter().map(|d| d.norm_squared().as_f64()).sum::<f64>())
            .sqrt();
            if step_norm <= opts.parameter_tolerance * (x_norm + opts.parameter_tolerance) {
                converged = true;
                break 'outer;
            }

            let saved_cams: Vec<CameraPose<T>> = problem.cameras.iter().map(|c| c.pose).collect();
            let saved_pts: Vec<Point3<T>> = problem.points.iter().map(|p| p.position).collect();
            for (ci, cam) in problem.cameras.iter_mut().enumerate() {
                if let Some(c) = cam_slot[ci] {
                    let mut d: Vector6<T> = delta_c.fixed_rows::<6>(6 * c).into_owned();
                    for k in 0..6 {
                        if !cam.free[k] {
                            d[k] = T::zero();
                        }
                    }
                    cam.pose = retract_pose(&cam.pose, &d);
                }
            }
            for (pi, pt) in problem.points.iter_mut().enumerate() {
                if let Some(p) = pt_slot[pi] {
                    pt.position += delta_p[p];
                }
            }
            let (new_cost, _) = total_cost(problem, &active);
            if new_cost < cost {
                let rel = (cost - new_cost) / cost.max(f64::MIN_POSITIVE);
                cost = new_cost;
                lambda = (lambda * 0.1).max(1e-12);
                if rel <= opts.function_tolerance {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            for (cam, pose) in problem.cameras.iter_mut().zip(saved_cams) {
                cam.pose = pose;
            }
            for (pt, pos) in problem.points.iter_mut().zip(saved_pts) {
                pt.position = pos;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                // no descent direction left at working precision
                converged = true;
                break 'outer;
            }
        }
    }

    let (final_cost, final_err) = total_cost(problem, &active);
    BaReport {
        initial_cost: cost0,
        final_cost,
        initial_mean_error: err0,
        final_mean_error: final_err,
        iterations,
        converged,
        observations: active.len(),
    }
}

fn parameter_norm<T: Real>(problem: &BaProblem<T>, cam_slot: &[Option<usize>], pt_slot: &[Option<usize>]) -> f64 {
    let mut s = 0.0;
    for (i, c) in problem.cameras.iter().enumerate() {
        if cam_slot[i].is_some() {
            s += c.pose.translation.norm_squared().as_f64() + 3.0;
        }
    }
    for (i, p) in problem.points.iter().enumerate() {
        if pt_slot[i].is_some() {
            s += p.position.coords.norm_squared().as_f64();
        }
    }
    s.sqrt()
}
