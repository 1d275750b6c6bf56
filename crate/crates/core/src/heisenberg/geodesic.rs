//! Minimising geodesics of the Heisenberg group.
//!
//! After left-translating the start to the origin, a geodesic to `(P, z)` with
//! `P = (x, y)` lives in the plane spanned by `P` and `JP`, `J(x, y) = (−y, x)`.
//! Identifying that plane with `C`, its horizontal part is
//! `w(s) = u (e^{iθs} − 1)/(iθ)` with `|u| = L`, so
//!
//! ```text
//! z(s) = L² (θs − sin θs) / (2θ²),   |P| = 2L |sin(θ/2)| / |θ|
//! ```
//!
//! and `θ` solves `(θ − sin θ)/(8 sin²(θ/2)) = z/|P|²` on `(−2π, 2π)`.

use std::f64::consts::PI;

use super::{group_inv, group_mul, HeisPoint};
use crate::error::{Error, Result};

const TOL: f64 = 1e-10;
const MAX_ITER: usize = 200;

/// A discretised geodesic and its sub-Riemannian length.
#[derive(Clone, Debug)]
pub struct Geodesic {
    pub points: Vec<HeisPoint>,
    pub length: f64,
}

fn ratio(theta: f64) -> f64 {
    if theta.abs() < 1e-4 {
        // (θ − sin θ)/(8 sin²(θ/2)) = θ/12 + θ³/720 + …
        return theta / 12.0 + theta.powi(3) / 720.0;
    }
    let s = (0.5 * theta).sin();
    (theta - theta.sin()) / (8.0 * s * s)
}

/// Solve `ratio(θ) = target` for `θ ∈ [0, 2π)`, `target ≥ 0`.
///
/// Bisects down to round-off, since the endpoint error in `d̂` scales like the
/// square root of the residual; the tolerance only decides success.
fn solve_theta(target: f64) -> Result<f64> {
    let mut lo = 0.0;
    let mut hi = 2.0 * PI;
    for _ in 0..MAX_ITER {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if ratio(mid) < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    if (ratio(mid) - target).abs() <= TOL * target.max(1.0) {
        Ok(mid)
    } else {
        Err(Error::NoConvergence {
            what: "geodesic vertical parameter",
            iterations: MAX_ITER,
        })
    }
}

/// `e^{iφ}` acting on `v ∈ R^{2k}` as `cos φ · v + sin φ · Jv`.
fn complex_mul(re: f64, im: f64, x: &[f64], y: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let nx = x.iter().zip(y).map(|(a, b)| re * a - im * b).collect();
    let ny = x.iter().zip(y).map(|(a, b)| re * b + im * a).collect();
    (nx, ny)
}

/// Minimising geodesic from `q0` to `q1` sampled at `steps + 1` equally spaced times.
pub fn geodesic(q0: &HeisPoint, q1: &HeisPoint, steps: usize) -> Result<Geodesic> {
    if steps == 0 {
        return Err(Error::Domain("geodesic needs at least one step".into()));
    }
    let target = group_mul(&group_inv(q0), q1)?;
    let k = target.k();
    let p2 = target.horizontal_norm_squared();
    let z = target.z;
    if p2 == 0.0 && z == 0.0 {
        return Err(Error::Domain("geodesic endpoints coincide".into()));
    }

    let mut points = Vec::with_capacity(steps + 1);
    let length;
    if p2 == 0.0 || z.abs() / p2 > 1e12 {
        // vertical target: a full circle of area |z|
        let theta = 2.0 * PI * z.signum();
        length = 2.0 * (PI * z.abs()).sqrt();
        let mut ux = vec![0.0; k];
        ux[0] = length;
        let uy = vec![0.0; k];
        for i in 0..=steps {
            let s = i as f64 / steps as f64;
            // (e^{iθs} − 1)/(iθ)
            let (c, sn) = ((theta * s).cos(), (theta * s).sin());
            let (re, im) = (sn / theta, (1.0 - c) / theta);
            let (x, y) = complex_mul(re, im, &ux, &uy);
            let zz = length * length * (theta * s - (theta * s).sin()) / (2.0 * theta * theta);
            points.push(group_mul(q0, &HeisPoint { x, y, z: zz })?);
        }
    } else {
        let pn = p2.sqrt();
        let mut theta = solve_theta(z.abs() / p2)?;
        if z < 0.0 {
            theta = -theta;
        }
        length = if theta.abs() < 1e-12 {
            pn
        } else {
            pn * theta.abs() / (2.0 * (0.5 * theta).sin().abs())
        };
        // w(s) = m(s) P with m(s) = (e^{iθs} − 1)/(e^{iθ} − 1)
        let (dr, di) = (theta.cos() - 1.0, theta.sin());
        let den = dr * dr + di * di;
        for i in 0..=steps {
            let s = i as f64 / steps as f64;
            let (re, im, zz) = if theta.abs() < 1e-12 {
                (s, 0.0, 0.0)
            } else {
                let (nr, ni) = ((theta * s).cos() - 1.0, (theta * s).sin());
                (
                    (nr * dr + ni * di) / den,
                    (ni * dr - nr * di) / den,
                    length * length * (theta * s - (theta * s).sin()) / (2.0 * theta * theta),
                )
            };
            let (x, y) = complex_mul(re, im, &target.x, &target.y);
            points.push(group_mul(q0, &HeisPoint { x, y, z: zz })?);
        }
    }
    Ok(Geodesic { points, length })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heisenberg::fhat_squared;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn p1(x: f64, y: f64, z: f64) -> HeisPoint {
        HeisPoint::new(vec![x], vec![y], z).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, k: usize) -> HeisPoint {
        HeisPoint::new(
            (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
            (0..k).map(|_| rng.random_range(-2.0..2.0)).collect(),
            rng.random_range(-2.0..2.0),
        )
        .unwrap()
    }

    fn dhat(a: &HeisPoint, b: &HeisPoint) -> f64 {
        fhat_squared(&group_mul(&group_inv(a), b).unwrap()).sqrt()
    }

    /// Sub-Riemannian length of the polyline, from left-translated increments.
    fn discrete_length(g: &Geodesic) -> f64 {
        g.points
            .windows(2)
            .map(|w| group_mul(&group_inv(&w[0]), &w[1]).unwrap().horizontal_norm_squared().sqrt())
            .sum()
    }

    #[test]
    fn horizontal_target_is_a_segment() {
        let g = geodesic(&HeisPoint::identity(1), &p1(1.0, 0.0, 0.0), 10).unwrap();
        for (i, p) in g.points.iter().enumerate() {
            assert!((p.x[0] - i as f64 / 10.0).abs() < 1e-15);
            assert_eq!(p.y[0], 0.0);
            assert_eq!(p.z, 0.0);
        }
        assert!((g.length - 1.0).abs() < 1e-15);
    }

    #[test]
    fn vertical_target_is_reached() {
        for &h in &[0.3, -1.7, 1e-3] {
            let q1 = p1(0.0, 0.0, h);
            let g = geodesic(&HeisPoint::identity(1), &q1, 50).unwrap();
            assert!(dhat(g.points.last().unwrap(), &q1) < 1e-6);
            assert!((g.length - fhat_squared(&q1).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn random_targets_are_reached() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for k in 1..=3 {
            for _ in 0..100 {
                let q0 = random(&mut rng, k);
                let q1 = random(&mut rng, k);
                let g = geodesic(&q0, &q1, 16).unwrap();
                assert_eq!(g.points[0], q0);
                assert!(dhat(g.points.last().unwrap(), &q1) < 1e-6);
            }
        }
    }

    #[test]
    fn length_within_box_metric_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..200 {
            let q0 = random(&mut rng, 1);
            let q1 = random(&mut rng, 1);
            let g = geodesic(&q0, &q1, 4000).unwrap();
            let f = dhat(&q0, &q1);
            assert!(g.length >= f / (2.0 * 2f64.sqrt()) && g.length <= 2f64.sqrt() * f);
            assert!((discrete_length(&g) - g.length).abs() / g.length < 1e-3);
        }
    }

    #[test]
    fn bad_arguments() {
        let q = p1(0.1, 0.2, 0.3);
        assert!(geodesic(&q, &q, 10).is_err());
        assert!(geodesic(&q, &p1(0.0, 0.0, 0.0), 0).is_err());
    }
}
