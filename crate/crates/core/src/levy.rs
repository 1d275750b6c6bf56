//! Brownian increments with truncated Lévy-area expansions.
//!
//! For a step of length `h`:
//!
//! * polynomial: `A^{jl} = ½(c_{l1}W^j − c_{j1}W^l) + ½Σ_{m<K2}(c_{jm}c_{l,m+1} − c_{j,m+1}c_{lm})`,
//!   `c_{jm} ~ N(0, h/(2m+1))`;
//! * Fourier: `A^{jl} = Σ_{m≤K2}(a_{lm}W^j − a_{jm}W^l) + πΣ_{m≤K2} m(a_{jm}b_{lm} − a_{lm}b_{jm})`,
//!   `a_{jm}, b_{jm} ~ N(0, h/(2π²m²))`.
//!
//! Both truncations lose some variance: at `K2 = 10` the polynomial series
//! keeps 95.2% of `h²/4` and the Fourier series 94.2%.

use std::f64::consts::PI;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevyMethod {
    #[default]
    Polynomial,
    Fourier,
}

impl FromStr for LevyMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "polynomial" => Ok(LevyMethod::Polynomial),
            "fourier" => Ok(LevyMethod::Fourier),
            _ => Err(Error::Config(format!("unknown levy method `{s}` (polynomial|fourier)"))),
        }
    }
}

impl std::fmt::Display for LevyMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LevyMethod::Polynomial => "polynomial",
            LevyMethod::Fourier => "fourier",
        })
    }
}

/// How the area part of each increment is generated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub k2: usize,
    pub method: LevyMethod,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            k2: 10,
            method: LevyMethod::Polynomial,
        }
    }
}

/// Driving noise of one time step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepIncrement {
    pub dw: DVector<f64>,
    /// Antisymmetric `k × k` matrix of approximate areas.
    pub levy: DMatrix<f64>,
    /// Series coefficients used for the areas: `c_{jm}` for the polynomial
    /// method, `a_{jm}` for Fourier. Empty when `k = 1`.
    pub aux_c: DMatrix<f64>,
    pub delta: f64,
}

impl StepIncrement {
    /// An increment with given `dw` and areas, without series coefficients.
    pub fn from_parts(dw: DVector<f64>, levy: DMatrix<f64>, delta: f64) -> Self {
        let k = dw.len();
        StepIncrement {
            dw,
            levy,
            aux_c: DMatrix::zeros(k, 0),
            delta,
        }
    }
}

fn normal(rng: &mut impl Rng, sd: f64) -> f64 {
    let z: f64 = rng.sample(StandardNormal);
    sd * z
}

/// Draw one step increment of length `delta` in `k` dimensions.
pub fn sample_increment(
    rng: &mut impl Rng,
    k: usize,
    delta: f64,
    k2: usize,
    method: LevyMethod,
) -> Result<StepIncrement> {
    if k2 < 1 {
        return Err(Error::Domain("K2 must be at least 1".into()));
    }
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::Domain(format!("step length must be positive, got {delta}")));
    }
    let sd = delta.sqrt();
    let dw = DVector::from_fn(k, |_, _| normal(rng, sd));
    let mut levy = DMatrix::zeros(k, k);
    if k < 2 {
        return Ok(StepIncrement {
            dw,
            levy,
            aux_c: DMatrix::zeros(k, 0),
            delta,
        });
    }
    let aux_c = match method {
        LevyMethod::Polynomial => {
            let c = DMatrix::from_fn(k, k2, |_, m| normal(rng, (delta / (2.0 * (m + 1) as f64 + 1.0)).sqrt()));
            for j in 0..k {
                for l in (j + 1)..k {
                    let mut a = 0.5 * (c[(l, 0)] * dw[j] - c[(j, 0)] * dw[l]);
                    for m in 0..k2 - 1 {
                        a += 0.5 * (c[(j, m)] * c[(l, m + 1)] - c[(j, m + 1)] * c[(l, m)]);
                    }
                    levy[(j, l)] = a;
                    levy[(l, j)] = -a;
                }
            }
            c
        }
        LevyMethod::Fourier => {
            let sdm = |m: usize| (delta / (2.0 * PI * PI * (m * m) as f64)).sqrt();
            let a = DMatrix::from_fn(k, k2, |_, m| normal(rng, sdm(m + 1)));
            let b = DMatrix::from_fn(k, k2, |_, m| normal(rng, sdm(m + 1)));
            for j in 0..k {
                for l in (j + 1)..k {
                    let mut s = 0.0;
                    for m in 0..k2 {
                        s += a[(l, m)] * dw[j] - a[(j, m)] * dw[l];
                        s += PI * (m + 1) as f64 * (a[(j, m)] * b[(l, m)] - a[(l, m)] * b[(j, m)]);
                    }
                    levy[(j, l)] = s;
                    levy[(l, j)] = -s;
                }
            }
            a
        }
    };
    Ok(StepIncrement {
        dw,
        levy,
        aux_c,
        delta,
    })
}

/// Variance of the truncated area `A^{12}` as a fraction of `h²/4`.
pub fn truncated_variance_fraction(k2: usize, method: LevyMethod) -> f64 {
    match method {
        LevyMethod::Polynomial => {
            let k = k2 as f64;
            (1.0 / 6.0 + 0.25 * (1.0 / 3.0 - 1.0 / (2.0 * k + 1.0))) * 4.0
        }
        LevyMethod::Fourier => (1..=k2).map(|m| 1.0 / (m * m) as f64).sum::<f64>() * 6.0 / (PI * PI),
    }
}

/// Chen's relation: the increment over two consecutive steps.
pub fn chen_combine(first: &StepIncrement, second: &StepIncrement) -> StepIncrement {
    let k = first.dw.len();
    let dw = &first.dw + &second.dw;
    let mut levy = &first.levy + &second.levy;
    for j in 0..k {
        for l in 0..k {
            levy[(j, l)] += 0.5 * (first.dw[j] * second.dw[l] - first.dw[l] * second.dw[j]);
        }
    }
    StepIncrement::from_parts(dw, levy, first.delta + second.delta)
}
