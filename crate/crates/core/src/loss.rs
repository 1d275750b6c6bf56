//! Score-matching losses over batches of simulated paths.
//!
//! All losses are Riemann sums over the steps of each path. The score on the
//! step `(t_{i−1}, t_i]` is evaluated at the step's end, `(t_i, X_i)`, for
//! `i = 1..n`, and the batch average divides by the number of paths.
//!
//! Per-path contributions are computed in parallel, sorted, and combined with
//! a pairwise sum, so the result does not depend on the order of the paths.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{adapted_chart, approx_score, check_step2, FrameJet, Point, SubRiemannianModel};
use crate::heisenberg::{neg_t_score, summed_area, HeisPoint, VERTICAL_SCALE};
use crate::score::ScoreModel;
use crate::sim::PathSample;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Divergence,
    DenoisingEuclidean,
    DenoisingHeisenberg,
    DenoisingGeneral,
}

impl FromStr for LossKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "divergence" => Ok(LossKind::Divergence),
            "denoising_euclidean" => Ok(LossKind::DenoisingEuclidean),
            "denoising_heisenberg" => Ok(LossKind::DenoisingHeisenberg),
            "denoising_general" => Ok(LossKind::DenoisingGeneral),
            _ => Err(Error::Config(format!("unknown loss kind {s:?}"))),
        }
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Divergence => "divergence",
            LossKind::DenoisingEuclidean => "denoising_euclidean",
            LossKind::DenoisingHeisenberg => "denoising_heisenberg",
            LossKind::DenoisingGeneral => "denoising_general",
        })
    }
}

/// Which of the two equivalent forms of a denoising loss to compute.
///
/// `Inner` is `⟨S, δS − 2g⟩`, `Squared` is `δ‖S − g/δ‖²`. They differ by
/// `‖g‖²/δ`, which does not depend on the score parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossForm {
    #[default]
    Inner,
    Squared,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Loss {
    pub kind: LossKind,
    pub form: LossForm,
    /// Vertical constant `c` of the Heisenberg surrogate; the target uses `c/4`.
    pub vertical_scale: f64,
}

impl Loss {
    pub fn new(kind: LossKind) -> Self {
        Loss {
            kind,
            form: LossForm::Inner,
            vertical_scale: VERTICAL_SCALE,
        }
    }

    pub fn with_form(mut self, form: LossForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_vertical_scale(mut self, c: f64) -> Self {
        self.vertical_scale = c;
        self
    }
}

/// `Σ_j (S^j div σ_j + Σ_m σ^m_j ∂_m S^j)` at `(t, x)`.
pub fn divergence_of_score<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    t: f64,
    x: &Point,
) -> Result<f64> {
    check_shapes(model, score)?;
    if !score.smooth() {
        return Err(Error::Unsupported("the divergence needs a differentiable activation".into()));
    }
    let jet = FrameJet::at(model, x)?;
    let e = score.evaluate(t, x.as_slice(), true);
    let jac = e.jacobian.as_ref().expect("jacobian requested");
    Ok(div_term(&jet, &e.value, jac))
}

fn div_term(jet: &FrameJet, s: &[f64], jac: &DMatrix<f64>) -> f64 {
    let mut acc = 0.0;
    for (j, sj) in s.iter().enumerate() {
        acc += sj * jet.divergence(j);
        for m in 0..jet.frame.nrows() {
            acc += jet.frame[(m, j)] * jac[(j, m)];
        }
    }
    acc
}

fn check_shapes<S: ScoreModel + ?Sized>(model: &(impl SubRiemannianModel + ?Sized), score: &S) -> Result<()> {
    if score.input_dim() != model.dim() {
        return Err(Error::Dimension {
            what: "score input",
            expected: model.dim(),
            got: score.input_dim(),
        });
    }
    if score.output_dim() != model.rank() {
        return Err(Error::Dimension {
            what: "score output",
            expected: model.rank(),
            got: score.output_dim(),
        });
    }
    Ok(())
}

/// Denoising target `g` on one step, with `⟨S, δS − 2g⟩` the per-step loss.
fn target(
    model: &(impl SubRiemannianModel + ?Sized),
    loss: &Loss,
    prev: &Point,
    x: &Point,
    path: &PathSample,
    i: usize,
) -> Result<DVector<f64>> {
    let inc = &path.increments[i - 1];
    match loss.kind {
        LossKind::DenoisingEuclidean => Ok(-&inc.dw),
        LossKind::DenoisingHeisenberg => {
            let k = model.rank() / 2;
            let q = HeisPoint::new(
                inc.dw.as_slice()[..k].to_vec(),
                inc.dw.as_slice()[k..].to_vec(),
                summed_area(&inc.levy, k),
            )?;
            Ok(-neg_t_score(&q, loss.vertical_scale))
        }
        // δ Ŝ_δ does not depend on δ, so evaluate the chart score at unit time
        LossKind::DenoisingGeneral => Ok(approx_score(model, &adapted_chart(model, prev)?, x, 1.0)?.0),
        LossKind::Divergence => unreachable!("divergence loss has no target"),
    }
}

/// Loss of one path (before dividing by the batch size) and optionally its gradient.
fn path_loss<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    loss: &Loss,
    path: &PathSample,
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if path.states.len() != path.increments.len() + 1 || path.times.len() != path.states.len() {
        return Err(Error::Domain("path has inconsistent times, states and increments".into()));
    }
    let mut grad = if want_grad { vec![0.0; score.params().len()] } else { Vec::new() };
    let mut total = 0.0;
    for i in 1..path.states.len() {
        let t = path.times[i];
        let x = &path.states[i];
        let delta = path.increments[i - 1].delta;
        let divergence = loss.kind == LossKind::Divergence;
        let e = score.evaluate(t, x.as_slice(), divergence);
        let s = DVector::from_column_slice(&e.value);
        if divergence {
            let jet = FrameJet::at(model, x)?;
            let jac = e.jacobian.as_ref().expect("jacobian requested");
            total += delta * (s.norm_squared() + 2.0 * div_term(&jet, &e.value, jac));
            if want_grad {
                let div = DVector::from_fn(s.len(), |j, _| jet.divergence(j));
                let ds = (&s + &div) * (2.0 * delta);
                let dj = jet.frame.transpose() * (2.0 * delta);
                score.backprop(&e, ds.as_slice(), Some(&dj), &mut grad);
            }
        } else {
            let g = target(model, loss, &path.states[i - 1], x, path, i)?;
            total += match loss.form {
                LossForm::Inner => s.dot(&(&s * delta - &g * 2.0)),
                LossForm::Squared => delta * (&s - &g / delta).norm_squared(),
            };
            if want_grad {
                let ds = &s * (2.0 * delta) - &g * 2.0;
                score.backprop(&e, ds.as_slice(), None, &mut grad);
            }
        }
    }
    Ok((total, grad))
}

fn order(a: &(f64, Vec<f64>), b: &(f64, Vec<f64>)) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| {
        a.1.iter()
            .zip(&b.1)
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(Ordering::Equal)
    })
}

fn tree_sum(parts: &[(f64, Vec<f64>)]) -> (f64, Vec<f64>) {
    match parts.len() {
        1 => parts[0].clone(),
        n => {
            let (a, b) = parts.split_at(n / 2);
            let (va, mut ga) = tree_sum(a);
            let (vb, gb) = tree_sum(b);
            for (x, y) in ga.iter_mut().zip(&gb) {
                *x += y;
            }
            (va + vb, ga)
        }
    }
}

fn evaluate<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    loss: &Loss,
    batch: &[PathSample],
    want_grad: bool,
) -> Result<(f64, Vec<f64>)> {
    if batch.is_empty() {
        return Err(Error::Domain("loss of an empty batch".into()));
    }
    check_shapes(model, score)?;
    match loss.kind {
        LossKind::Divergence if !score.smooth() => {
            return Err(Error::Unsupported(
                "the divergence loss needs a differentiable activation; use elu".into(),
            ))
        }
        LossKind::DenoisingHeisenberg if model.dim() != model.rank() + 1 || model.rank() % 2 != 0 => {
            return Err(Error::Unsupported("the heisenberg denoising loss needs a heisenberg geometry".into()))
        }
        LossKind::DenoisingGeneral => check_step2(model, &batch[0].states[0])?,
        _ => {}
    }
    let mut parts = batch
        .par_iter()
        .map(|p| path_loss(model, score, loss, p, want_grad))
        .collect::<Result<Vec<_>>>()?;
    parts.sort_by(order);
    let (v, mut g) = tree_sum(&parts);
    let k = batch.len() as f64;
    g.iter_mut().for_each(|x| *x /= k);
    Ok((v / k, g))
}

/// Loss value on a batch.
pub fn loss_value<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    loss: &Loss,
    batch: &[PathSample],
) -> Result<f64> {
    Ok(evaluate(model, score, loss, batch, false)?.0)
}

/// Loss value and its gradient with respect to the score parameters.
pub fn loss_and_gradient<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    loss: &Loss,
    batch: &[PathSample],
) -> Result<(f64, Vec<f64>)> {
    evaluate(model, score, loss, batch, true)
}

/// `(δ/K) Σ_l Σ_i [‖S‖² + 2 div S]`.
pub fn divergence_loss<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    batch: &[PathSample],
) -> Result<f64> {
    loss_value(model, score, &Loss::new(LossKind::Divergence), batch)
}

/// `(1/K) Σ_l Σ_i ⟨S, δS + 2ΔW⟩`.
pub fn denoising_loss_euclidean<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    batch: &[PathSample],
) -> Result<f64> {
    loss_value(model, score, &Loss::new(LossKind::DenoisingEuclidean), batch)
}

/// `(1/K) Σ_l Σ_i ⟨S, δS − 2Ŝ(Δ_i)⟩` with the Heisenberg surrogate.
pub fn heisenberg_denoising_loss<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    batch: &[PathSample],
) -> Result<f64> {
    loss_value(model, score, &Loss::new(LossKind::DenoisingHeisenberg), batch)
}

/// `(δ/K) Σ_l Σ_i ⟨S, S − 2Ŝ_δ(X_{i−1}, X_i)⟩` with a chart re-centred every step.
pub fn general_denoising_loss<S: ScoreModel + ?Sized>(
    model: &(impl SubRiemannianModel + ?Sized),
    score: &S,
    batch: &[PathSample],
) -> Result<f64> {
    loss_value(model, score, &Loss::new(LossKind::DenoisingGeneral), batch)
}
