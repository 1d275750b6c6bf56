//! The training loop: sample a batch, evaluate the loss, step the optimizer.

use std::time::Instant;

use nalgebra::DVector;

use crate::config::{geometry_from_config, positive, KvConfig};
use crate::error::{Error, Result};
use crate::geometry::{check_step2, Geometry, Point, SubRiemannianModel};
use crate::levy::{LevyMethod, NoiseSpec};
use crate::loss::{loss_and_gradient, Loss, LossKind};
use crate::net::{Activation, NetworkParams, Optimizer, OptimizerKind};
use crate::rng::{labels, RngStream};
use crate::sim::{sample_batch, Grid, Scheme};
use crate::stats;

/// Everything one training run needs.
#[derive(Clone, Debug)]
pub struct TrainingConfig {
    pub geometry: Geometry,
    pub x0: Point,
    pub t_end: f64,
    /// Steps per path.
    pub n: usize,
    /// Paths per batch.
    pub batch_size: usize,
    pub batches_per_epoch: usize,
    pub epochs: usize,
    pub loss_kind: LossKind,
    pub scheme: Scheme,
    pub noise: NoiseSpec,
    pub lr: f64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
}

impl TrainingConfig {
    /// The settings of the Heisenberg experiment: a 3×15 ELU network trained
    /// for 2500 epochs of 8 batches of 64 paths on `[0, 1]`.
    pub fn heisenberg_default(x0: Point) -> Result<Self> {
        if x0.len() != 3 {
            return Err(Error::Dimension {
                what: "heisenberg start point",
                expected: 3,
                got: x0.len(),
            });
        }
        Ok(TrainingConfig {
            geometry: Geometry::Heisenberg(crate::heisenberg::HeisenbergModel::new(1)),
            x0,
            t_end: 1.0,
            n: 100,
            batch_size: 64,
            batches_per_epoch: 8,
            epochs: 2500,
            loss_kind: LossKind::DenoisingHeisenberg,
            scheme: Scheme::HeisenbergExact,
            noise: NoiseSpec::default(),
            lr: 1e-3,
            seed: 0,
            hidden: vec![15, 15, 15],
            activation: Activation::Elu,
            optimizer: OptimizerKind::Adam,
        })
    }

    /// Read a training config. Keys other than the geometry's are `x0`, `T`,
    /// `n`, `K`, `batches_per_epoch`, `epochs`, `loss_kind`, `scheme`, `K2`,
    /// `levy_method`, `lr`, `seed`, `hidden`, `activation` and `optimizer`.
    pub fn from_kv(cfg: &KvConfig) -> Result<Self> {
        let x0 = Point::from_vec(cfg.require_list("x0")?);
        let geometry = geometry_from_config(cfg, &x0)?;
        let heis = geometry.as_heisenberg().is_some();
        let default_loss = if heis {
            LossKind::DenoisingHeisenberg
        } else {
            LossKind::DenoisingGeneral
        };
        let default_scheme = match &geometry {
            Geometry::Heisenberg(_) => Scheme::HeisenbergExact,
            Geometry::Euclidean(_) => Scheme::Euler,
            Geometry::Affine(_) => Scheme::Taylor,
        };
        let hidden = match cfg.list("hidden")? {
            None => vec![15, 15, 15],
            Some(v) => v
                .iter()
                .map(|&h| {
                    if h >= 1.0 && h.fract() == 0.0 {
                        Ok(h as usize)
                    } else {
                        Err(Error::key("hidden", "layer widths must be positive integers"))
                    }
                })
                .collect::<Result<Vec<_>>>()?,
        };
        let c = TrainingConfig {
            geometry,
            x0,
            t_end: cfg.parsed_or("T", 1.0)?,
            n: positive("n", cfg.parsed_or("n", 100)?)?,
            batch_size: positive("K", cfg.parsed_or("K", 64)?)?,
            batches_per_epoch: positive("batches_per_epoch", cfg.parsed_or("batches_per_epoch", 8)?)?,
            epochs: cfg.parsed_or("epochs", 2500)?,
            loss_kind: cfg.parsed_or("loss_kind", default_loss)?,
            scheme: cfg.parsed_or("scheme", default_scheme)?,
            noise: NoiseSpec {
                k2: positive("K2", cfg.parsed_or("K2", 10)?)?,
                method: cfg.parsed_or("levy_method", LevyMethod::Polynomial)?,
            },
            lr: cfg.parsed_or("lr", 1e-3)?,
            seed: cfg.parsed_or("seed", 0)?,
            hidden,
            activation: cfg.parsed_or("activation", Activation::Elu)?,
            optimizer: cfg.parsed_or("optimizer", OptimizerKind::Adam)?,
        };
        c.validate()?;
        Ok(c)
    }

    /// Shape and compatibility checks.
    pub fn validate(&self) -> Result<()> {
        if !(self.t_end > 0.0 && self.t_end.is_finite()) {
            return Err(Error::key("T", "must be positive"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::key("lr", "must be positive"));
        }
        if self.x0.len() != self.geometry.dim() {
            return Err(Error::key("x0", format!("expected {} coordinates", self.geometry.dim())));
        }
        if self.hidden.is_empty() {
            return Err(Error::key("hidden", "need at least one hidden layer"));
        }
        for (key, v) in [("n", self.n), ("K", self.batch_size), ("batches_per_epoch", self.batches_per_epoch)] {
            positive(key, v)?;
        }
        let heis = self.geometry.as_heisenberg().is_some();
        if self.scheme == Scheme::HeisenbergExact && !heis {
            return Err(Error::key("scheme", "heisenberg_exact needs the heisenberg geometry"));
        }
        match self.loss_kind {
            LossKind::DenoisingHeisenberg => {
                if !heis {
                    return Err(Error::key("loss_kind", "denoising_heisenberg needs the heisenberg geometry"));
                }
                if self.scheme == Scheme::Euler {
                    return Err(Error::key(
                        "scheme",
                        "denoising_heisenberg reads group increments; use heisenberg_exact or taylor",
                    ));
                }
            }
            LossKind::DenoisingGeneral => {
                check_step2(&self.geometry, &self.x0).map_err(|e| Error::key("geometry", e.to_string()))?
            }
            LossKind::Divergence if !self.activation.is_smooth() => {
                log::warn!("the divergence loss needs a differentiable activation; {} will fail", self.activation);
            }
            _ => {}
        }
        Ok(())
    }

    /// `[d + 1, hidden.., k]`.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut s = vec![self.geometry.dim() + 1];
        s.extend(&self.hidden);
        s.push(self.geometry.rank());
        s
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.t_end, self.n)
    }

    pub fn loss(&self) -> Loss {
        let c = self
            .geometry
            .as_heisenberg()
            .map_or(crate::heisenberg::VERTICAL_SCALE, |h| h.vertical_scale);
        Loss::new(self.loss_kind).with_vertical_scale(c)
    }

    /// Network parameters before the first update.
    pub fn initial_params(&self) -> Result<NetworkParams> {
        let mut rng = RngStream::new(self.seed, 0).substream(labels::INIT, 0);
        NetworkParams::init(&self.layer_sizes(), self.activation, &mut rng)
    }
}

/// Per-epoch loss and timing.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LossReport {
    /// Mean batch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
}

impl LossReport {
    /// Medians of the first and last fifth of the epochs.
    pub fn trend(&self) -> Option<(f64, f64)> {
        let n = self.epoch_loss.len();
        if n < 5 {
            return None;
        }
        let w = n / 5;
        let first = stats::median(&self.epoch_loss[..w]).ok()?;
        let last = stats::median(&self.epoch_loss[n - w..]).ok()?;
        Some((first, last))
    }
}

/// Train from a fresh initialisation.
pub fn train(cfg: &TrainingConfig) -> Result<(NetworkParams, LossReport)> {
    train_from(cfg, cfg.initial_params()?, |_, _| {})
}

/// Train starting from `params`; `progress(epoch, loss)` runs after every epoch.
///
/// Iteration `it = epoch · batches_per_epoch + batch` draws its batch from
/// sub-stream `(BATCH, it)` of the seed, so runs are reproducible.
pub fn train_from(
    cfg: &TrainingConfig,
    mut params: NetworkParams,
    mut progress: impl FnMut(usize, f64),
) -> Result<(NetworkParams, LossReport)> {
    cfg.validate()?;
    if params.layer_sizes().first() != Some(&(cfg.geometry.dim() + 1))
        || params.layer_sizes().last() != Some(&cfg.geometry.rank())
    {
        return Err(Error::Config(format!(
            "network shape {:?} does not fit geometry {} of dimension {}",
            params.layer_sizes(),
            cfg.geometry.name(),
            cfg.geometry.dim()
        )));
    }
    let grid = cfg.grid()?;
    let loss = cfg.loss();
    let root = RngStream::new(cfg.seed, 0);
    let mut opt = Optimizer::new(cfg.optimizer, params.theta().len());
    let mut report = LossReport::default();
    let log_every = (cfg.epochs / 20).max(1);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let mut losses = Vec::with_capacity(cfg.batches_per_epoch);
        for b in 0..cfg.batches_per_epoch {
            let it = epoch * cfg.batches_per_epoch + b;
            let rng = root.substream(labels::BATCH, it as u64);
            let batch = sample_batch(&cfg.geometry, &cfg.x0, grid, cfg.batch_size, &rng, cfg.scheme, cfg.noise)?;
            let (value, grad) = loss_and_gradient(&cfg.geometry, &params, &loss, &batch)?;
            if !value.is_finite() || !grad.iter().all(|g| g.is_finite()) {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    epoch,
                    batch: b,
                });
            }
            opt.update(params.theta_mut(), &grad, cfg.lr)?;
            losses.push(value);
        }
        let mean = stats::mean(&losses);
        report.epoch_loss.push(mean);
        report.epoch_seconds.push(start.elapsed().as_secs_f64());
        if epoch % log_every == 0 || epoch + 1 == cfg.epochs {
            log::info!("epoch {epoch}: loss {mean:.6}");
        }
        progress(epoch, mean);
    }
    Ok((params, report))
}

/// Relative error of a 1-d score against the Gaussian score `−(x − x0)/t`:
/// mean `|S − s*|` over mean `|s*|` on a `points × points` grid covering
/// `t ∈ [t_min, 1]` and `|x − x0| ≤ radius`.
///
/// Pointwise ratios are undefined at `x = x0`, hence the ratio of means.
pub fn gaussian_score_error(params: &NetworkParams, x0: f64, t_min: f64, radius: f64, points: usize) -> Result<f64> {
    if points < 2 {
        return Err(Error::Domain("need at least two probe points per axis".into()));
    }
    let mut errs = Vec::with_capacity(points * points);
    let mut mags = Vec::with_capacity(points * points);
    for i in 0..points {
        let t = t_min + (1.0 - t_min) * i as f64 / (points - 1) as f64;
        for j in 0..points {
            let x = x0 - radius + 2.0 * radius * j as f64 / (points - 1) as f64;
            let s = params.forward(t, &[x])?[0];
            let exact = -(x - x0) / t;
            errs.push((s - exact).abs());
            mags.push(exact.abs());
        }
    }
    Ok(stats::mean(&errs) / stats::mean(&mags))
}

/// `x0` as a `DVector` for configs built in code.
pub fn point(v: &[f64]) -> Point {
    DVector::from_column_slice(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn euclid_cfg(epochs: usize) -> TrainingConfig {
        let kv = KvConfig::parse(&format!(
            "geometry = euclidean\nx0 = 0\nT = 1\nn = 20\nK = 16\nbatches_per_epoch = 2\nepochs = {epochs}\n\
             loss_kind = denoising_euclidean\nlr = 0.01\nseed = 4\nhidden = 8"
        ))
        .unwrap();
        let c = TrainingConfig::from_kv(&kv).unwrap();
        kv.finish().unwrap();
        c
    }

    #[test]
    fn score_error_of_the_zero_network_is_one() {
        let z = NetworkParams::zeros(&[2, 3, 1], Activation::Elu).unwrap();
        let e = gaussian_score_error(&z, 0.3, 0.2, 2.0, 11).unwrap();
        assert!((e - 1.0).abs() < 1e-15);
        assert!(gaussian_score_error(&z, 0.0, 0.2, 2.0, 1).is_err());
    }

    #[test]
    fn zero_epochs_returns_initial_params() {
        let c = euclid_cfg(0);
        let (p, r) = train(&c).unwrap();
        assert_eq!(p, c.initial_params().unwrap());
        assert!(r.epoch_loss.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_moves() {
        let c = euclid_cfg(3);
        let (a, ra) = train(&c).unwrap();
        let (b, rb) = train(&c).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra.epoch_loss, rb.epoch_loss);
        assert_ne!(a, c.initial_params().unwrap());
        assert_eq!(ra.epoch_loss.len(), 3);
    }

    #[test]
    fn compatibility_checks() {
        let base = "x0 = 0\n";
        for bad in [
            "geometry = euclidean\nloss_kind = denoising_heisenberg",
            "geometry = euclidean\nscheme = heisenberg_exact",
            "geometry = euclidean\nK = 0",
            "geometry = euclidean\nlr = -1",
            "geometry = euclidean\nhidden = 0",
            "geometry = euclidean\nloss_kind = nonsense",
        ] {
            let kv = KvConfig::parse(&format!("{base}{bad}")).unwrap();
            let e = TrainingConfig::from_kv(&kv).unwrap_err();
            assert!(e.is_config(), "{bad}: {e}");
        }
        let kv = KvConfig::parse("x0 = 0 0 0\ngeometry = heisenberg\nscheme = euler").unwrap();
        assert!(TrainingConfig::from_kv(&kv).is_err());
    }

    #[test]
    fn heisenberg_defaults_match_experiment() {
        let kv = KvConfig::parse("geometry = heisenberg\nx0 = 0.5, 0, 0.8").unwrap();
        let c = TrainingConfig::from_kv(&kv).unwrap();
        assert_eq!(c.layer_sizes(), vec![4, 15, 15, 15, 2]);
        assert_eq!((c.epochs, c.batch_size, c.batches_per_epoch), (2500, 64, 8));
        assert_eq!(c.loss_kind, LossKind::DenoisingHeisenberg);
        assert_eq!(c.scheme, Scheme::HeisenbergExact);
        let d = TrainingConfig::heisenberg_default(point(&[0.5, 0.0, 0.8])).unwrap();
        assert_eq!(d.layer_sizes(), c.layer_sizes());
    }

    #[test]
    fn trend_uses_fifths() {
        let r = LossReport {
            epoch_loss: (0..10).map(|i| 10.0 - i as f64).collect(),
            epoch_seconds: vec![0.0; 10],
        };
        assert_eq!(r.trend(), Some((9.5, 1.5)));
    }
}
