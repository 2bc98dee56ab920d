use nalgebra::{Matrix3, Matrix4, Point3, Vector3};

use super::CameraPose;
use crate::Real;

/// Real roots of `c[0]·x⁴ + c[1]·x³ + c[2]·x² + c[3]·x + c[4]`, polished by Newton steps.
fn quartic_roots(c: [f64; 5]) -> Vec<f64> {
    if c[0].abs() < 1e-14 * c.iter().fold(0.0f64, |m, v| m.max(v.abs())) {
        return Vec::new();
    }
    let a: Vec<f64> = c[1..].iter().map(|v| v / c[0]).collect();
    let companion = Matrix4::new(
        -a[0], -a[1], -a[2], -a[3],
        1.0, 0.0, 0.0, 0.0,
        0.0, 1.0, 0.0, 0.0,
        0.0, 0.0, 1.0, 0.0,
    );
    let eval = |x: f64| (((x + a[0]) * x + a[1]) * x + a[2]) * x + a[3];
    let deriv = |x: f64| ((4.0 * x + 3.0 * a[0]) * x + 2.0 * a[1]) * x + a[2];
    let mut out = Vec::new();
    for z in companion.complex_eigenvalues().iter() {
        if z.im.abs() > 1e-6 * (1.0 + z.re.abs()) {
            continue;
        }
        let mut x = z.re;
        for _ in 0..5 {
            let d = deriv(x);
            if d == 0.0 {
                break;
            }
            x -= eval(x) / d;
        }
        if x.is_finite() {
            out.push(x);
        }
    }
    out
}

/// Rigid `R, t` with `cam ≈ R·world + t` from three or more pairs.
fn rigid_fit(world: &[Vector3<f64>], cam: &[Vector3<f64>]) -> Option<(Matrix3<f64>, Vector3<f64>)> {
    let n = world.len() as f64;
    let mw = world.iter().sum::<Vector3<f64>>() / n;
    let mc = cam.iter().sum::<Vector3<f64>>() / n;
    let mut h = Matrix3::zeros();
    for (w, c) in world.iter().zip(cam) {
        h += (c - mc) * (w - mw).transpose();
    }
    let svd = h.svd(true, true);
    let (u, v_t) = (svd.u?, svd.v_t?);
    let mut s = Matrix3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    Some((r, mc - r * mw))
}

/// Up to four poses from three world points and their unit bearing vectors
/// (Grunert's quartic).
pub fn p3p<T: Real>(world: &[Point3<T>; 3], bearings: &[Vector3<T>; 3]) -> Vec<CameraPose<T>> {
    let w: Vec<Vector3<f64>> = world.iter().map(|p| p.coords.map(|v| v.as_f64())).collect();
    let j: Vec<Vector3<f64>> = bearings.iter().map(|b| b.map(|v| v.as_f64()).normalize()).collect();
    let a2 = (w[1] - w[2]).norm_squared();
    let b2 = (w[0] - w[2]).norm_squared();
    let c2 = (w[0] - w[1]).norm_squared();
    if a2 <= 0.0 || b2 <= 0.0 || c2 <= 0.0 {
        return Vec::new();
    }
    let ca = j[1].dot(&j[2]);
    let cb = j[0].dot(&j[2]);
    let cg = j[0].dot(&j[1]);
    let amc = (a2 - c2) / b2;
    let apc = (a2 + c2) / b2;
    let coeffs = [
        (amc - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca,
        4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb),
        2.0 * (amc * amc - 1.0 + 2.0 * amc * amc * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
            - 4.0 * apc * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg),
        4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - apc) * ca * cg),
        (1.0 + amc).powi(2) - 4.0 * a2 / b2 * cg * cg,
    ];
    let mut poses = Vec::new();
    for v in quartic_roots(coeffs) {
        if v <= 0.0 {
            continue;
        }
        let den = 2.0 * (cg - v * ca);
        if den.abs() < 1e-12 {
            continue;
        }
        let u = ((-1.0 + amc) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / den;
        let q = 1.0 + v * v - 2.0 * v * cb;
        if u <= 0.0 || q <= 0.0 {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let cam = [j[0] * s1, j[1] * (u * s1), j[2] * (v * s1)];
        let Some((r, t)) = rigid_fit(&w, &cam) else { continue };
        let pose = CameraPose { rotation: r.map(T::lit), translation: t.map(T::lit) };
        if pose.is_valid() {
            poses.push(pose);
        }
    }
    poses
}
