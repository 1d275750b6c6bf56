//! Trainable score approximators `S^θ(t, x)` in frame coefficients.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::net::{self, NetworkParams};

/// Output of one forward evaluation, with whatever the backward pass needs.
pub struct Evaluation<T> {
    pub value: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
    pub tape: T,
}

/// A differentiable family `θ ↦ S^θ`.
pub trait ScoreModel: Sync {
    type Tape: Send;

    /// Number of coordinates `d` the score takes (time excluded).
    fn input_dim(&self) -> usize;

    /// Number of frame coefficients `k`.
    fn output_dim(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    fn evaluate(&self, t: f64, x: &[f64], with_jacobian: bool) -> Evaluation<Self::Tape>;

    /// Add `∂/∂θ [⟨d_value, S⟩ + ⟨d_jac, ∂S/∂x⟩]` to `grad`.
    fn backprop(&self, eval: &Evaluation<Self::Tape>, d_value: &[f64], d_jac: Option<&DMatrix<f64>>, grad: &mut [f64]);

    /// Whether the input Jacobian is smooth enough for the divergence loss.
    fn smooth(&self) -> bool {
        true
    }
}

impl ScoreModel for NetworkParams {
    type Tape = net::Tape;

    fn input_dim(&self) -> usize {
        NetworkParams::input_dim(self) - 1
    }
    fn output_dim(&self) -> usize {
        NetworkParams::output_dim(self)
    }
    fn params(&self) -> &[f64] {
        self.theta()
    }
    fn params_mut(&mut self) -> &mut [f64] {
        self.theta_mut()
    }
    fn evaluate(&self, t: f64, x: &[f64], with_jacobian: bool) -> Evaluation<net::Tape> {
        let mut tape = self.record(t, x, with_jacobian);
        Evaluation {
            value: std::mem::take(&mut tape.value),
            jacobian: tape.jacobian.take(),
            tape,
        }
    }
    fn backprop(&self, eval: &Evaluation<net::Tape>, d_value: &[f64], d_jac: Option<&DMatrix<f64>>, grad: &mut [f64]) {
        NetworkParams::backprop(self, &eval.tape, d_value, d_jac, grad)
    }
    fn smooth(&self) -> bool {
        self.activation().is_smooth()
    }
}

/// `S_t(x) = a (x − x0)/t + b` on a model with `k = d`.
///
/// Parameters are `[a, b_1, .., b_d]`. The Gaussian score of Brownian motion
/// started at `x0` is `a = −1, b = 0`.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineScore {
    pub x0: DVector<f64>,
    theta: Vec<f64>,
}

impl AffineScore {
    pub fn new(x0: DVector<f64>, a: f64, b: &[f64]) -> Result<Self> {
        if b.len() != x0.len() {
            return Err(Error::Dimension {
                what: "affine score offset",
                expected: x0.len(),
                got: b.len(),
            });
        }
        let mut theta = vec![a];
        theta.extend_from_slice(b);
        Ok(AffineScore { x0, theta })
    }

    pub fn a(&self) -> f64 {
        self.theta[0]
    }

    pub fn b(&self) -> &[f64] {
        &self.theta[1..]
    }
}

impl ScoreModel for AffineScore {
    type Tape = (f64, Vec<f64>);

    fn input_dim(&self) -> usize {
        self.x0.len()
    }
    fn output_dim(&self) -> usize {
        self.x0.len()
    }
    fn params(&self) -> &[f64] {
        &self.theta
    }
    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }
    fn evaluate(&self, t: f64, x: &[f64], with_jacobian: bool) -> Evaluation<(f64, Vec<f64>)> {
        let d = self.x0.len();
        let u: Vec<f64> = x.iter().zip(self.x0.iter()).map(|(a, b)| (a - b) / t).collect();
        let value = u.iter().zip(self.b()).map(|(ui, bi)| self.a() * ui + bi).collect();
        let jacobian = with_jacobian.then(|| DMatrix::identity(d, d) * (self.a() / t));
        Evaluation {
            value,
            jacobian,
            tape: (t, u),
        }
    }
    fn backprop(&self, eval: &Evaluation<(f64, Vec<f64>)>, d_value: &[f64], d_jac: Option<&DMatrix<f64>>, grad: &mut [f64]) {
        let (t, u) = &eval.tape;
        grad[0] += d_value.iter().zip(u).map(|(g, ui)| g * ui).sum::<f64>();
        if let Some(dj) = d_jac {
            grad[0] += dj.trace() / t;
        }
        for (g, dv) in grad[1..].iter_mut().zip(d_value) {
            *g += dv;
        }
    }
}
