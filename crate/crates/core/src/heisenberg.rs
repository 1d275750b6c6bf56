//! The Heisenberg group `H^k = R^{2k+1}` with coordinates `(x, y, z)`.
//!
//! Group law `(x̃, ỹ, z̃)·(x, y, z) = (x̃+x, ỹ+y, z̃+z+½(⟨x̃,y⟩−⟨x,ỹ⟩))`, left-invariant
//! frame `σ_j = ∂_{x_j} − (y_j/2)∂_z`, `τ_j = ∂_{y_j} + (x_j/2)∂_z`, and
//! `[σ_i, τ_j] = δ_ij ∂_z`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{sgn, Point, SubRiemannianModel};

mod geodesic;
mod heat_kernel;

pub use geodesic::{geodesic, Geodesic};
pub use heat_kernel::{heat_kernel, heat_kernel_with, log_heat_kernel, Quadrature};

/// Vertical constant of the box metric `f̂² = |x|² + |y|² + 4π|z|`.
pub const VERTICAL_SCALE: f64 = 4.0 * PI;

/// A group element `(x, y, z)` with `x, y ∈ R^k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeisPoint {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub z: f64,
}

impl HeisPoint {
    pub fn new(x: Vec<f64>, y: Vec<f64>, z: f64) -> Result<Self> {
        if x.len() != y.len() || x.is_empty() {
            return Err(Error::Dimension {
                what: "heisenberg y block",
                expected: x.len(),
                got: y.len(),
            });
        }
        Ok(HeisPoint { x, y, z })
    }

    pub fn identity(k: usize) -> Self {
        HeisPoint {
            x: vec![0.0; k],
            y: vec![0.0; k],
            z: 0.0,
        }
    }

    pub fn k(&self) -> usize {
        self.x.len()
    }

    /// Coordinates `(x_1..x_k, y_1..y_k, z)`.
    pub fn to_point(&self) -> Point {
        let mut v = Vec::with_capacity(2 * self.k() + 1);
        v.extend_from_slice(&self.x);
        v.extend_from_slice(&self.y);
        v.push(self.z);
        DVector::from_vec(v)
    }

    pub fn from_point(p: &Point) -> Result<Self> {
        if p.len() < 3 || p.len() % 2 == 0 {
            return Err(Error::Domain(format!(
                "heisenberg coordinates need odd length ≥ 3, got {}",
                p.len()
            )));
        }
        let k = (p.len() - 1) / 2;
        Ok(HeisPoint {
            x: p.rows(0, k).iter().copied().collect(),
            y: p.rows(k, k).iter().copied().collect(),
            z: p[2 * k],
        })
    }

    /// Squared Euclidean norm of the horizontal part `(x, y)`.
    pub fn horizontal_norm_squared(&self) -> f64 {
        self.x.iter().chain(self.y.iter()).map(|v| v * v).sum()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(u, v)| u * v).sum()
}

/// Group product `q̃ · q`.
pub fn group_mul(qt: &HeisPoint, q: &HeisPoint) -> Result<HeisPoint> {
    if qt.k() != q.k() || q.y.len() != q.k() || qt.y.len() != qt.k() {
        return Err(Error::Dimension {
            what: "heisenberg point",
            expected: qt.k(),
            got: q.k(),
        });
    }
    let x = qt.x.iter().zip(&q.x).map(|(a, b)| a + b).collect();
    let y = qt.y.iter().zip(&q.y).map(|(a, b)| a + b).collect();
    let z = qt.z + q.z + 0.5 * (dot(&qt.x, &q.y) - dot(&q.x, &qt.y));
    Ok(HeisPoint { x, y, z })
}

/// Group inverse, `(x, y, z)^{-1} = (−x, −y, −z)`.
pub fn group_inv(q: &HeisPoint) -> HeisPoint {
    HeisPoint {
        x: q.x.iter().map(|v| -v).collect(),
        y: q.y.iter().map(|v| -v).collect(),
        z: -q.z,
    }
}

/// The `2k` frame fields at `q` as columns: `σ_1..σ_k, τ_1..τ_k`.
pub fn frames(q: &HeisPoint) -> DMatrix<f64> {
    let k = q.k();
    let d = 2 * k + 1;
    let mut f = DMatrix::zeros(d, 2 * k);
    for j in 0..k {
        f[(j, j)] = 1.0;
        f[(2 * k, j)] = -0.5 * q.y[j];
        f[(k + j, k + j)] = 1.0;
        f[(2 * k, k + j)] = 0.5 * q.x[j];
    }
    f
}

/// `f̂(q)² = |x|² + |y|² + 4π|z|`.
pub fn fhat_squared(q: &HeisPoint) -> f64 {
    q.horizontal_norm_squared() + VERTICAL_SCALE * q.z.abs()
}

/// Score surrogate `Ŝ_t(0, q)` in frame coefficients with the default constant `c = 4π`.
pub fn score_hat(q: &HeisPoint, t: f64) -> Result<DVector<f64>> {
    score_hat_scaled(q, t, VERTICAL_SCALE)
}

/// As [`score_hat`] with vertical constant `c` in `f̂² = |x|² + |y|² + c|z|`:
/// `−tŜ^j = x^j − (c/4) y^j sgn z`, `−tŜ^{k+j} = y^j + (c/4) x^j sgn z`.
pub fn score_hat_scaled(q: &HeisPoint, t: f64, c: f64) -> Result<DVector<f64>> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("score time must be positive, got {t}")));
    }
    Ok(neg_t_score(q, c) / -t)
}

/// `−t Ŝ_t(q)`, which does not depend on `t`.
pub(crate) fn neg_t_score(q: &HeisPoint, c: f64) -> DVector<f64> {
    let k = q.k();
    let s = 0.25 * c * sgn(q.z);
    let mut v = DVector::zeros(2 * k);
    for j in 0..k {
        v[j] = q.x[j] - s * q.y[j];
        v[k + j] = q.y[j] + s * q.x[j];
    }
    v
}

/// Exact-in-law step `q · (ΔW_x, ΔW_y, ΔA)` where `ΔA = Σ_j A^{j,k+j}`.
pub fn heis_step(q: &HeisPoint, dw: &[f64], da: f64) -> Result<HeisPoint> {
    let k = q.k();
    if dw.len() != 2 * k {
        return Err(Error::Dimension {
            what: "brownian increment",
            expected: 2 * k,
            got: dw.len(),
        });
    }
    let inc = HeisPoint {
        x: dw[..k].to_vec(),
        y: dw[k..].to_vec(),
        z: da,
    };
    group_mul(q, &inc)
}

/// `Σ_j A^{j,k+j}` from a full `2k × 2k` area matrix.
pub fn summed_area(levy: &DMatrix<f64>, k: usize) -> f64 {
    (0..k).map(|j| levy[(j, k + j)]).sum()
}

/// The Heisenberg group as a sub-Riemannian model, with extension `∂_z`.
#[derive(Clone, Debug)]
pub struct HeisenbergModel {
    pub k: usize,
    /// Vertical constant used by the score surrogate (default 4π).
    pub vertical_scale: f64,
}

impl HeisenbergModel {
    pub fn new(k: usize) -> Self {
        assert!(k >= 1, "heisenberg group needs k ≥ 1");
        HeisenbergModel {
            k,
            vertical_scale: VERTICAL_SCALE,
        }
    }

    pub fn with_vertical_scale(k: usize, c: f64) -> Self {
        HeisenbergModel {
            vertical_scale: c,
            ..HeisenbergModel::new(k)
        }
    }

    /// Surrogate score of `x` relative to the base point `x0`, using left-invariance.
    pub fn score_from(&self, x0: &Point, x: &Point, t: f64) -> Result<DVector<f64>> {
        let b = HeisPoint::from_point(x0)?;
        let q = HeisPoint::from_point(x)?;
        let rel = group_mul(&group_inv(&b), &q)?;
        score_hat_scaled(&rel, t, self.vertical_scale)
    }
}

impl SubRiemannianModel for HeisenbergModel {
    fn dim(&self) -> usize {
        2 * self.k + 1
    }
    fn rank(&self) -> usize {
        2 * self.k
    }
    fn frame(&self, x: &Point) -> DMatrix<f64> {
        let k = self.k;
        let d = 2 * k + 1;
        let mut f = DMatrix::zeros(d, 2 * k);
        for j in 0..k {
            f[(j, j)] = 1.0;
            f[(2 * k, j)] = -0.5 * x[k + j];
            f[(k + j, k + j)] = 1.0;
            f[(2 * k, k + j)] = 0.5 * x[j];
        }
        f
    }
    fn frame_extension(&self, _x: &Point) -> DMatrix<f64> {
        let d = self.dim();
        let mut e = DMatrix::zeros(d, 1);
        e[(d - 1, 0)] = 1.0;
        e
    }
    fn frame_partial(&self, l: usize, _x: &Point) -> Option<DMatrix<f64>> {
        let k = self.k;
        let mut p = DMatrix::zeros(2 * k + 1, 2 * k);
        if l < k {
            p[(2 * k, k + l)] = 0.5;
        } else if l < 2 * k {
            p[(2 * k, l - k)] = -0.5;
        }
        Some(p)
    }
    fn group_step(&self, x: &Point, dw: &DVector<f64>, levy: &DMatrix<f64>) -> Option<Point> {
        let q = HeisPoint::from_point(x).ok()?;
        let da = summed_area(levy, self.k);
        heis_step(&q, dw.as_slice(), da).ok().map(|p| p.to_point())
    }
}
