//! Path simulation: Euler–Maruyama, the step-2 stochastic Taylor step and the
//! exact group step, with per-path random streams.

use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ito_drift_from_jet, stratonovich_drift_from_jet, FrameJet, Point, SubRiemannianModel};
use crate::levy::{sample_increment, NoiseSpec, StepIncrement};
use crate::rng::{labels, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Euler,
    Taylor,
    HeisenbergExact,
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euler" => Ok(Scheme::Euler),
            "taylor" => Ok(Scheme::Taylor),
            "heisenberg_exact" => Ok(Scheme::HeisenbergExact),
            _ => Err(Error::Config(format!(
                "unknown scheme `{s}` (euler|taylor|heisenberg_exact)"
            ))),
        }
    }
}

impl std::fmt::Display for Scheme {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scheme::Euler => "euler",
            Scheme::Taylor => "taylor",
            Scheme::HeisenbergExact => "heisenberg_exact",
        })
    }
}

/// A simulated path on a uniform grid, with the noise that drove it.
#[derive(Clone, Debug, PartialEq)]
pub struct PathSample {
    pub times: Vec<f64>,
    pub states: Vec<Point>,
    /// `increments[i]` moves `states[i]` to `states[i + 1]`.
    pub increments: Vec<StepIncrement>,
}

impl PathSample {
    pub fn steps(&self) -> usize {
        self.increments.len()
    }

    pub fn delta(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    pub fn terminal(&self) -> &Point {
        self.states.last().expect("path has at least one state")
    }
}

/// Time-grid parameters shared by all simulation entry points.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub t_end: f64,
    pub n: usize,
}

impl Grid {
    pub fn new(t_end: f64, n: usize) -> Result<Self> {
        if !(t_end > 0.0) || !t_end.is_finite() {
            return Err(Error::Domain(format!("horizon must be positive, got {t_end}")));
        }
        if n < 1 {
            return Err(Error::Domain("need at least one step".into()));
        }
        Ok(Grid { t_end, n })
    }

    pub fn delta(&self) -> f64 {
        self.t_end / self.n as f64
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n).map(|i| i as f64 * self.delta()).collect()
    }
}

/// One Euler–Maruyama step `x + σ(x)ΔW + τ_0(x)δ`.
pub fn euler_step(model: &(impl SubRiemannianModel + ?Sized), x: &Point, inc: &StepIncrement) -> Result<Point> {
    let jet = FrameJet::at(model, x)?;
    let drift = ito_drift_from_jet(model, &jet, x)?;
    let mut out = x + &jet.frame * &inc.dw;
    out.axpy(inc.delta, &drift, 1.0);
    Ok(out)
}

/// One step of the order-1 stochastic Taylor scheme for step-2 models:
///
/// `x + Σ σ_j W^j + ½ Σ ∇̄_{σ_a}σ_b W^a W^b + Σ_{a<b} [σ_a, σ_b] Â^{ab} + σ_0 δ`.
pub fn taylor_step(model: &(impl SubRiemannianModel + ?Sized), x: &Point, inc: &StepIncrement) -> Result<Point> {
    let k = model.rank();
    if inc.dw.len() != k || inc.levy.nrows() != k || inc.levy.ncols() != k {
        return Err(Error::Dimension {
            what: "step increment",
            expected: k,
            got: inc.dw.len(),
        });
    }
    let jet = FrameJet::at(model, x)?;
    let s0 = stratonovich_drift_from_jet(model, &jet, x)?;
    let mut out = x + &jet.frame * &inc.dw;
    out.axpy(inc.delta, &s0, 1.0);
    for a in 0..k {
        for b in 0..k {
            let w = 0.5 * inc.dw[a] * inc.dw[b];
            if w != 0.0 {
                out.axpy(w, &jet.connection(a, b), 1.0);
            }
        }
        for b in (a + 1)..k {
            let area = inc.levy[(a, b)];
            if area != 0.0 {
                out.axpy(area, &jet.bracket(a, b), 1.0);
            }
        }
    }
    Ok(out)
}

/// Advance `x` by one step of `scheme`.
pub fn step(
    model: &(impl SubRiemannianModel + ?Sized),
    scheme: Scheme,
    x: &Point,
    inc: &StepIncrement,
) -> Result<Point> {
    match scheme {
        Scheme::Euler => euler_step(model, x, inc),
        Scheme::Taylor => taylor_step(model, x, inc),
        Scheme::HeisenbergExact => model
            .group_step(x, &inc.dw, &inc.levy)
            .ok_or_else(|| Error::Unsupported("the exact scheme needs a model with a group law".into())),
    }
}

fn check_start(model: &(impl SubRiemannianModel + ?Sized), x0: &Point) -> Result<()> {
    if x0.len() != model.dim() {
        return Err(Error::Dimension {
            what: "start point",
            expected: model.dim(),
            got: x0.len(),
        });
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("start point has non-finite entries".into()));
    }
    Ok(())
}

/// Simulate one path, drawing increments from `rng`.
pub fn simulate_path(
    model: &(impl SubRiemannianModel + ?Sized),
    x0: &Point,
    grid: Grid,
    scheme: Scheme,
    noise: NoiseSpec,
    rng: &mut RngStream,
) -> Result<PathSample> {
    check_start(model, x0)?;
    let delta = grid.delta();
    let k = model.rank();
    let mut states = Vec::with_capacity(grid.n + 1);
    let mut increments = Vec::with_capacity(grid.n);
    states.push(x0.clone());
    for i in 0..grid.n {
        let inc = sample_increment(rng, k, delta, noise.k2, noise.method)?;
        let next = step(model, scheme, &states[i], &inc)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        states.push(next);
        increments.push(inc);
    }
    Ok(PathSample {
        times: grid.times(),
        states,
        increments,
    })
}

/// Run a path with given increments (for common-noise comparisons).
pub fn path_from_increments(
    model: &(impl SubRiemannianModel + ?Sized),
    x0: &Point,
    scheme: Scheme,
    increments: Vec<StepIncrement>,
) -> Result<PathSample> {
    check_start(model, x0)?;
    let mut states = vec![x0.clone()];
    let mut times = vec![0.0];
    for (i, inc) in increments.iter().enumerate() {
        let next = step(model, scheme, &states[i], inc)?;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        states.push(next);
        times.push(times[i] + inc.delta);
    }
    Ok(PathSample {
        times,
        states,
        increments,
    })
}

/// Euler–Maruyama path `X̂_{i+1} = X̂_i + σ(X̂_i)ΔW_i + τ_0(X̂_i)δ`.
pub fn euler_maruyama_path(
    model: &(impl SubRiemannianModel + ?Sized),
    x0: &Point,
    t_end: f64,
    n: usize,
    rng: &mut RngStream,
) -> Result<PathSample> {
    simulate_path(model, x0, Grid::new(t_end, n)?, Scheme::Euler, NoiseSpec::default(), rng)
}

/// `K` independent paths; path `l` uses sub-stream `(PATHS, l)` of `rng`.
pub fn sample_batch(
    model: &(impl SubRiemannianModel + ?Sized),
    x0: &Point,
    grid: Grid,
    count: usize,
    rng: &RngStream,
    scheme: Scheme,
    noise: NoiseSpec,
) -> Result<Vec<PathSample>> {
    if count < 1 {
        return Err(Error::Domain("batch size must be at least 1".into()));
    }
    (0..count)
        .into_par_iter()
        .map(|l| {
            let mut r = rng.substream(labels::PATHS, l as u64);
            simulate_path(model, x0, grid, scheme, noise, &mut r)
        })
        .collect()
}

/// Terminal states only, for large ensembles. Same streams as [`sample_batch`].
pub fn sample_terminal(
    model: &(impl SubRiemannianModel + ?Sized),
    x0: &Point,
    grid: Grid,
    count: usize,
    rng: &RngStream,
    scheme: Scheme,
    noise: NoiseSpec,
) -> Result<Vec<Point>> {
    check_start(model, x0)?;
    let k = model.rank();
    let delta = grid.delta();
    (0..count)
        .into_par_iter()
        .map(|l| {
            let mut r = rng.substream(labels::PATHS, l as u64);
            let mut x = x0.clone();
            for i in 0..grid.n {
                let inc = sample_increment(&mut r, k, delta, noise.k2, noise.method)?;
                x = step(model, scheme, &x, &inc)?;
                if !x.iter().all(|v| v.is_finite()) {
                    return Err(Error::Divergence { step: i + 1 });
                }
            }
            Ok(x)
        })
        .collect()
}

/// Largest Euclidean distance between matching states of two paths.
pub fn max_distance(a: &[Point], b: &[Point]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v).norm())
        .fold(0.0, f64::max)
}
