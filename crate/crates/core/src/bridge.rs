//! Diffusion bridges by time reversal.
//!
//! The bridge from `x0` to `xT` over `[0, T]` is simulated backwards: start at
//! `xT` and run the reversed process, whose drift replaces `Z` by `−Z` and adds
//! the score `S_{T−t}(x0, ·)`. Paths are then flipped so they are reported in
//! forward time, from the `x0` end to the `xT` end.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{FrameJet, Point, SubRiemannianModel};
use crate::heisenberg::HeisenbergModel;
use crate::levy::StepIncrement;
use crate::net::NetworkParams;
use crate::rng::{labels, RngStream};
use crate::sim::{Grid, PathSample};
use crate::stats::percentile_sorted;

/// Where the score `S_t(x0, x)` comes from.
#[derive(Clone, Debug)]
pub enum ScoreSource {
    /// A trained network evaluated at `(t, x)`; its base point is the `x0` it was trained from.
    Network(NetworkParams),
    /// The Heisenberg surrogate with vertical constant `c`.
    AnalyticHeisenberg { vertical_scale: f64 },
    /// The Gaussian score of Brownian motion with constant drift on `R^d`.
    AnalyticEuclidean,
}

impl ScoreSource {
    pub fn name(&self) -> &'static str {
        match self {
            ScoreSource::Network(_) => "network",
            ScoreSource::AnalyticHeisenberg { .. } => "analytic-heisenberg",
            ScoreSource::AnalyticEuclidean => "analytic-euclidean",
        }
    }

    /// Check that the source fits `model`.
    pub fn check(&self, model: &(impl SubRiemannianModel + ?Sized)) -> Result<()> {
        let (d, k) = (model.dim(), model.rank());
        match self {
            ScoreSource::Network(p) => {
                if p.input_dim() != d + 1 || p.output_dim() != k {
                    return Err(Error::Config(format!(
                        "network with layers {:?} does not fit a geometry with d = {d}, k = {k}",
                        p.layer_sizes()
                    )));
                }
            }
            ScoreSource::AnalyticHeisenberg { .. } => {
                if d != k + 1 || k % 2 != 0 {
                    return Err(Error::Config("analytic-heisenberg needs the heisenberg geometry".into()));
                }
            }
            ScoreSource::AnalyticEuclidean => {
                if d != k {
                    return Err(Error::Config("analytic-euclidean needs the euclidean geometry".into()));
                }
            }
        }
        Ok(())
    }

    /// Score coefficients `S_t(x0, x)` in the frame.
    pub fn coefficients(
        &self,
        model: &(impl SubRiemannianModel + ?Sized),
        x0: &Point,
        t: f64,
        x: &Point,
    ) -> Result<DVector<f64>> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("score time must be positive, got {t}")));
        }
        let s = match self {
            ScoreSource::Network(p) => DVector::from_vec(p.forward(t, x.as_slice())?),
            ScoreSource::AnalyticHeisenberg { vertical_scale } => {
                HeisenbergModel::with_vertical_scale(model.rank() / 2, *vertical_scale).score_from(x0, x, t)?
            }
            ScoreSource::AnalyticEuclidean => {
                let mean = x0 + model.drift(x0) * t;
                -(x - mean) / t
            }
        };
        if !s.iter().all(|v| v.is_finite()) {
            return Err(Error::Evaluation(format!("score at t = {t}")));
        }
        Ok(s)
    }
}

/// Drift of the reversed bridge in both conventions.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgeDrift {
    pub stratonovich: DVector<f64>,
    pub ito: DVector<f64>,
}

/// Drift of the reversed bridge at reverse time `t ∈ [0, T)`:
/// `½ Σ (div σ_j) σ_j − Z + Σ s^j σ_j` with `s = S_{T−t}(x0, x)`, plus
/// `½ Σ ∇̄_{σ_j} σ_j` in the Itô form.
pub fn reverse_bridge_drift(
    model: &(impl SubRiemannianModel + ?Sized),
    source: &ScoreSource,
    x0: &Point,
    t: f64,
    x: &Point,
    t_end: f64,
) -> Result<BridgeDrift> {
    if !(t < t_end) || t < 0.0 {
        return Err(Error::Domain(format!("reverse time {t} outside [0, {t_end})")));
    }
    let jet = FrameJet::at(model, x)?;
    let s = source.coefficients(model, x0, t_end - t, x)?;
    let mut strat = &jet.frame * &s - model.drift(x);
    let mut ito_extra = DVector::zeros(model.dim());
    for j in 0..model.rank() {
        strat.axpy(0.5 * jet.divergence(j), &jet.frame.column(j), 1.0);
        ito_extra.axpy(0.5, &jet.connection(j, j), 1.0);
    }
    let ito = &strat + ito_extra;
    Ok(BridgeDrift {
        stratonovich: strat,
        ito,
    })
}

#[derive(Clone, Debug)]
pub struct BridgeConfig {
    /// Conditioning start; the score's base point.
    pub x0: Point,
    /// Conditioning end; where the reverse simulation starts.
    pub x_t: Point,
    pub t_end: f64,
    pub n: usize,
    pub num_samples: usize,
    pub source: ScoreSource,
}

/// Pointwise quartiles of one statistic.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Quartiles {
    pub q25: Vec<f64>,
    pub q50: Vec<f64>,
    pub q75: Vec<f64>,
}

impl Quartiles {
    fn of(values: &mut [Vec<f64>]) -> Result<Self> {
        let mut q = Quartiles {
            q25: Vec::new(),
            q50: Vec::new(),
            q75: Vec::new(),
        };
        for v in values.iter_mut() {
            v.sort_by(f64::total_cmp);
            q.q25.push(percentile_sorted(v, 0.25)?);
            q.q50.push(percentile_sorted(v, 0.5)?);
            q.q75.push(percentile_sorted(v, 0.75)?);
        }
        Ok(q)
    }

    /// `q75 − q25` at time index `i`.
    pub fn iqr(&self, i: usize) -> f64 {
        self.q75[i] - self.q25[i]
    }
}

/// Per-time quartile curves of an ensemble.
///
/// For the Heisenberg group `horizontal` is `‖(x, y)‖` and `vertical` is the
/// signed `z`. Otherwise they are the norms of the first `k` coordinates and
/// of the rest, with no `vertical` curve when `k = d`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub times: Vec<f64>,
    pub horizontal: Quartiles,
    pub vertical: Option<Quartiles>,
    pub vertical_signed: bool,
}

#[derive(Clone, Debug)]
pub struct BridgeEnsemble {
    /// Forward-time paths; `states[0]` is the `x0` end.
    pub paths: Vec<PathSample>,
    pub summary: Summary,
}

impl BridgeEnsemble {
    /// Where each path ended up at the `x0` end.
    pub fn x0_ends(&self) -> Vec<Point> {
        self.paths.iter().map(|p| p.states[0].clone()).collect()
    }
}

/// Reverse the order of states and increments on the same uniform grid.
///
/// Applying it twice gives back the original path exactly.
pub fn time_flip(path: &PathSample) -> PathSample {
    let mut states = path.states.clone();
    states.reverse();
    let mut increments = path.increments.clone();
    increments.reverse();
    PathSample {
        times: path.times.clone(),
        states,
        increments,
    }
}

fn reverse_path(
    model: &(impl SubRiemannianModel + ?Sized),
    cfg: &BridgeConfig,
    grid: Grid,
    rng: &mut RngStream,
) -> Result<PathSample> {
    let k = model.rank();
    let delta = grid.delta();
    let sd = delta.sqrt();
    let mut states = Vec::with_capacity(grid.n + 1);
    let mut increments = Vec::with_capacity(grid.n);
    states.push(cfg.x_t.clone());
    for i in 0..grid.n {
        let x = &states[i];
        // left endpoints stay below T − δ/2; the clamp guards rounding in i·δ
        let t = (i as f64 * delta).min(cfg.t_end - 0.5 * delta);
        let drift = reverse_bridge_drift(model, &cfg.source, &cfg.x0, t, x, cfg.t_end)?;
        let dw = DVector::from_fn(k, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        });
        let mut next = x + crate::geometry::eval_frame(model, x)? * &dw;
        next.axpy(delta, &drift.ito, 1.0);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence { step: i + 1 });
        }
        states.push(next);
        increments.push(StepIncrement::from_parts(dw, DMatrix::zeros(k, k), delta));
    }
    Ok(PathSample {
        times: grid.times(),
        states,
        increments,
    })
}

/// Sample `num_samples` bridges with Euler–Maruyama on the reversed process.
///
/// Path `l` uses sub-stream `(BRIDGE, l)` of `rng`.
pub fn sample_bridge(
    model: &(impl SubRiemannianModel + ?Sized),
    cfg: &BridgeConfig,
    rng: &RngStream,
) -> Result<BridgeEnsemble> {
    let d = model.dim();
    for (what, p) in [("x0", &cfg.x0), ("xT", &cfg.x_t)] {
        if p.len() != d {
            return Err(Error::Dimension {
                what: if what == "x0" { "bridge start" } else { "bridge end" },
                expected: d,
                got: p.len(),
            });
        }
    }
    if cfg.num_samples == 0 {
        return Err(Error::Domain("need at least one bridge sample".into()));
    }
    cfg.source.check(model)?;
    let grid = Grid::new(cfg.t_end, cfg.n)?;
    let paths = (0..cfg.num_samples)
        .into_par_iter()
        .map(|l| {
            let mut r = rng.substream(labels::BRIDGE, l as u64);
            reverse_path(model, cfg, grid, &mut r).map(|p| time_flip(&p))
        })
        .collect::<Result<Vec<_>>>()?;
    let summary = ensemble_stats(&paths, model.rank(), model.dim() == model.rank() + 1)?;
    Ok(BridgeEnsemble { paths, summary })
}

/// Quartile curves of `‖first k coordinates‖` and of the remaining
/// coordinates (signed when there is exactly one, as for `z`).
pub fn ensemble_stats(paths: &[PathSample], rank: usize, signed_vertical: bool) -> Result<Summary> {
    let first = paths.first().ok_or_else(|| Error::Domain("empty ensemble".into()))?;
    let len = first.states.len();
    if paths.iter().any(|p| p.times != first.times || p.states.len() != len) {
        return Err(Error::Domain("ensemble paths do not share a time grid".into()));
    }
    let d = first.states[0].len();
    if rank == 0 || rank > d {
        return Err(Error::Domain(format!("rank {rank} outside 1..={d}")));
    }
    let signed = signed_vertical && d == rank + 1;
    let mut hor = vec![Vec::with_capacity(paths.len()); len];
    let mut ver = vec![Vec::with_capacity(paths.len()); len];
    for p in paths {
        for (i, x) in p.states.iter().enumerate() {
            hor[i].push(x.rows(0, rank).norm());
            if d > rank {
                ver[i].push(if signed { x[rank] } else { x.rows(rank, d - rank).norm() });
            }
        }
    }
    Ok(Summary {
        times: first.times.clone(),
        horizontal: Quartiles::of(&mut hor)?,
        vertical: if d > rank { Some(Quartiles::of(&mut ver)?) } else { None },
        vertical_signed: signed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::EuclideanModel;
    use crate::net::Activation;
    use crate::stats;
    use nalgebra::dvector;
    use rand::SeedableRng;

    #[test]
    fn heisenberg_zero_score_has_zero_stratonovich_drift() {
        let h = HeisenbergModel::new(1);
        let zero = ScoreSource::Network(NetworkParams::zeros(&[4, 3, 2], Activation::Elu).unwrap());
        let x = dvector![0.3, -0.2, 0.9];
        let d = reverse_bridge_drift(&h, &zero, &dvector![0.0, 0.0, 0.0], 0.2, &x, 1.0).unwrap();
        assert_eq!(d.stratonovich, DVector::zeros(3));
    }

    #[test]
    fn euclidean_drift_is_brownian_bridge_drift() {
        let e = EuclideanModel::new(2);
        let x0 = dvector![1.0, -1.0];
        let x = dvector![0.2, 0.5];
        let d = reverse_bridge_drift(&e, &ScoreSource::AnalyticEuclidean, &x0, 0.3, &x, 1.0).unwrap();
        let expected = (&x0 - &x) / 0.7;
        assert!((d.ito - expected).amax() < 1e-15);
        assert!(reverse_bridge_drift(&e, &ScoreSource::AnalyticEuclidean, &x0, 1.0, &x, 1.0).is_err());
    }

    #[test]
    fn drift_is_linear_in_score() {
        let h = HeisenbergModel::new(1);
        let net = NetworkParams::init(&[4, 6, 2], Activation::Elu, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1)).unwrap();
        let zero = NetworkParams::zeros(&[4, 6, 2], Activation::Elu).unwrap();
        let x0 = dvector![0.5, 0.0, 0.8];
        let x = dvector![0.1, 0.4, -0.3];
        let (t, te) = (0.25, 1.0);
        let with = reverse_bridge_drift(&h, &ScoreSource::Network(net.clone()), &x0, t, &x, te).unwrap();
        let without = reverse_bridge_drift(&h, &ScoreSource::Network(zero), &x0, t, &x, te).unwrap();
        let s = DVector::from_vec(net.forward(te - t, x.as_slice()).unwrap());
        assert_eq!(with.ito - without.ito, h.frame(&x) * s);
    }

    fn euclid_cfg(n: usize, samples: usize) -> BridgeConfig {
        BridgeConfig {
            x0: dvector![0.7],
            x_t: dvector![-0.4],
            t_end: 1.0,
            n,
            num_samples: samples,
            source: ScoreSource::AnalyticEuclidean,
        }
    }

    #[test]
    fn euclidean_bridge_hits_start() {
        let e = EuclideanModel::new(1);
        let ens = sample_bridge(&e, &euclid_cfg(512, 10_000), &RngStream::new(3, 0)).unwrap();
        let ends: Vec<f64> = ens.x0_ends().iter().map(|p| p[0]).collect();
        let m = stats::mean(&ends);
        let se = stats::std_error(&ends);
        assert!((m - 0.7).abs() < 3.0 * se.max(1e-12), "{m} ± {se}");
        assert!(stats::variance(&ends).sqrt() < 3.0 * (1.0f64 / 512.0).sqrt());
        for p in &ens.paths {
            assert_eq!(p.terminal()[0], -0.4);
        }
    }

    #[test]
    fn single_sample_is_deterministic() {
        let e = EuclideanModel::new(1);
        let a = sample_bridge(&e, &euclid_cfg(16, 1), &RngStream::new(9, 0)).unwrap();
        let b = sample_bridge(&e, &euclid_cfg(16, 1), &RngStream::new(9, 0)).unwrap();
        assert_eq!(a.paths, b.paths);
        assert_eq!(a.paths.len(), 1);
        let s = &a.summary.horizontal;
        assert_eq!(s.q25, s.q50);
        assert_eq!(s.q50, s.q75);
        assert!(a.summary.vertical.is_none());
    }

    #[test]
    fn flip_is_an_involution() {
        let e = EuclideanModel::new(2);
        let mut cfg = euclid_cfg(10, 3);
        cfg.x0 = dvector![0.0, 1.0];
        cfg.x_t = dvector![1.0, 0.0];
        let ens = sample_bridge(&e, &cfg, &RngStream::new(2, 0)).unwrap();
        for p in &ens.paths {
            assert_eq!(&time_flip(&time_flip(p)), p);
        }
    }

    fn heis_path(zs: &[f64]) -> PathSample {
        PathSample {
            times: (0..zs.len()).map(|i| i as f64).collect(),
            states: zs.iter().map(|&z| dvector![z, 2.0 * z, z]).collect(),
            increments: Vec::new(),
        }
    }

    #[test]
    fn stats_symmetry_and_ordering() {
        let p = heis_path(&[0.1, 0.5, -0.3]);
        let mut q = p.clone();
        for s in &mut q.states {
            s[2] = -s[2];
        }
        let st = ensemble_stats(&[p, q], 2, true).unwrap();
        assert_eq!(st.vertical.unwrap().q50, vec![0.0; 3]);

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let paths: Vec<_> = (0..17)
            .map(|_| heis_path(&(0..5).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect::<Vec<_>>()))
            .collect();
        let st = ensemble_stats(&paths, 2, true).unwrap();
        for q in [&st.horizontal, st.vertical.as_ref().unwrap()] {
            for i in 0..5 {
                assert!(q.q25[i] <= q.q50[i] && q.q50[i] <= q.q75[i]);
            }
        }
        assert!(ensemble_stats(&[], 2, true).is_err());
    }

    #[test]
    fn source_must_fit_geometry() {
        let h = HeisenbergModel::new(1);
        assert!(ScoreSource::AnalyticEuclidean.check(&h).is_err());
        assert!(ScoreSource::AnalyticHeisenberg { vertical_scale: 1.0 }.check(&h).is_ok());
        let net = NetworkParams::zeros(&[2, 3, 1], Activation::Elu).unwrap();
        assert!(ScoreSource::Network(net).check(&h).is_err());
    }
}
