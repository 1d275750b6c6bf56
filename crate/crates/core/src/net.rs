//! A small dense network `S^θ(t, x) → R^k` with hand-written derivatives.
//!
//! The input is `(t, x)`, the last layer is linear. Besides the output, the
//! forward pass can carry tangents `∂/∂x^i` through the network, giving the
//! input Jacobian needed by the divergence loss; the backward pass then
//! differentiates both the output and that Jacobian with respect to θ.

use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Elu,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            }
            Activation::Relu => z.max(0.0),
        }
    }

    fn d1(self, z: f64) -> f64 {
        match self {
            Activation::Elu => {
                if z > 0.0 {
                    1.0
                } else {
                    z.exp()
                }
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn d2(self, z: f64) -> f64 {
        match self {
            Activation::Elu if z <= 0.0 => z.exp(),
            _ => 0.0,
        }
    }

    pub fn is_smooth(self) -> bool {
        self == Activation::Elu
    }
}

impl FromStr for Activation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "elu" => Ok(Activation::Elu),
            "relu" => Ok(Activation::Relu),
            _ => Err(Error::Config(format!("unknown activation `{s}` (elu|relu)"))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Elu => "elu",
            Activation::Relu => "relu",
        })
    }
}

/// Network weights θ stored in one flat vector.
///
/// Layer `l` maps width `sizes[l]` to `sizes[l+1]`; its row-major weight
/// matrix comes first, then its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams {
    layer_sizes: Vec<usize>,
    activation: Activation,
    theta: Vec<f64>,
    offsets: Vec<usize>,
}

fn layer_offsets(sizes: &[usize]) -> Vec<usize> {
    let mut offs = Vec::with_capacity(sizes.len());
    let mut o = 0;
    for w in sizes.windows(2) {
        offs.push(o);
        o += w[1] * w[0] + w[1];
    }
    offs.push(o);
    offs
}

impl NetworkParams {
    /// Zero weights and biases. Allows networks without hidden layers.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.iter().any(|&s| s == 0) {
            return Err(Error::Config(format!("bad layer sizes {layer_sizes:?}")));
        }
        let offsets = layer_offsets(layer_sizes);
        Ok(NetworkParams {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            theta: vec![0.0; *offsets.last().unwrap()],
            offsets,
        })
    }

    /// He-uniform weights `U(±√(6/fan_in))`, zero biases.
    pub fn init(layer_sizes: &[usize], activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if layer_sizes.len() < 3 {
            return Err(Error::Config(
                "the score network needs at least one hidden layer".into(),
            ));
        }
        let mut p = Self::zeros(layer_sizes, activation)?;
        for l in 0..p.num_layers() {
            let (fan_in, fan_out) = (p.layer_sizes[l], p.layer_sizes[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let o = p.offsets[l];
            for v in &mut p.theta[o..o + fan_in * fan_out] {
                *v = rng.random_range(-bound..bound);
            }
        }
        Ok(p)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    pub fn theta_mut(&mut self) -> &mut [f64] {
        &mut self.theta
    }

    /// Weight matrix of layer `l` as an owned `out × in` matrix.
    pub fn weight(&self, l: usize) -> DMatrix<f64> {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let s = self.offsets[l];
        DMatrix::from_row_slice(o, i, &self.theta[s..s + i * o])
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let s = self.offsets[l] + i * o;
        &self.theta[s..s + o]
    }

    fn w(&self, l: usize) -> &[f64] {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        let s = self.offsets[l];
        &self.theta[s..s + i * o]
    }

    /// Set layer `l` from a matrix and bias (used by tests and loaders).
    pub fn set_layer(&mut self, l: usize, weight: &DMatrix<f64>, bias: &[f64]) -> Result<()> {
        let (i, o) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
        if weight.nrows() != o || weight.ncols() != i || bias.len() != o {
            return Err(Error::Dimension {
                what: "layer shape",
                expected: o * i,
                got: weight.len(),
            });
        }
        let s = self.offsets[l];
        for r in 0..o {
            for c in 0..i {
                self.theta[s + r * i + c] = weight[(r, c)];
            }
        }
        self.theta[s + i * o..s + i * o + o].copy_from_slice(bias);
        Ok(())
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() + 1 != self.input_dim() {
            return Err(Error::Dimension {
                what: "network input (time + coordinates)",
                expected: self.input_dim(),
                got: x.len() + 1,
            });
        }
        Ok(())
    }

    /// `S^θ(t, x)` in frame coefficients.
    pub fn forward(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        Ok(self.record(t, x, false).value)
    }

    /// `∂S^{θ,j}/∂x^i` as a `k × d` matrix.
    pub fn input_jacobian(&self, t: f64, x: &[f64]) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        Ok(self.record(t, x, true).jacobian.expect("requested"))
    }

    /// Forward pass keeping everything the backward pass needs.
    pub fn record(&self, t: f64, x: &[f64], with_jacobian: bool) -> Tape {
        let d = x.len();
        let nl = self.num_layers();
        let nd = if with_jacobian { d } else { 0 };
        let mut a: Vec<Vec<f64>> = Vec::with_capacity(nl + 1);
        let mut dphi: Vec<Vec<f64>> = Vec::with_capacity(nl);
        let mut ddphi: Vec<Vec<f64>> = Vec::new();
        // ta[l] holds the tangents of a_l along x^1..x^d, one row of width
        // n_l per direction; tz likewise for z_l
        let mut ta: Vec<Vec<f64>> = Vec::new();
        let mut tz: Vec<Vec<f64>> = Vec::new();
        let mut input = Vec::with_capacity(d + 1);
        input.push(t);
        input.extend_from_slice(x);
        a.push(input);
        if with_jacobian {
            let mut e = vec![0.0; d * (d + 1)];
            for i in 0..d {
                e[i * (d + 1) + i + 1] = 1.0;
            }
            ta.push(e);
        }
        for l in 0..nl {
            let (ni, no) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = self.w(l);
            let prev = &a[l];
            let mut zl = self.bias(l).to_vec();
            for (zr, row) in zl.iter_mut().zip(w.chunks_exact(ni)) {
                *zr += row.iter().zip(prev).map(|(p, q)| p * q).sum::<f64>();
            }
            let last = l + 1 == nl;
            if !last {
                dphi.push(zl.iter().map(|&v| self.activation.d1(v)).collect());
                if with_jacobian {
                    ddphi.push(zl.iter().map(|&v| self.activation.d2(v)).collect());
                }
            }
            if with_jacobian {
                let mut tzl = vec![0.0; nd * no];
                for (out, v) in tzl.chunks_exact_mut(no).zip(ta[l].chunks_exact(ni)) {
                    for (o, row) in out.iter_mut().zip(w.chunks_exact(ni)) {
                        *o = row.iter().zip(v).map(|(p, q)| p * q).sum();
                    }
                }
                let mut tal = tzl.clone();
                if !last {
                    for row in tal.chunks_exact_mut(no) {
                        for (v, dp) in row.iter_mut().zip(&dphi[l]) {
                            *v *= dp;
                        }
                    }
                }
                tz.push(tzl);
                ta.push(tal);
            }
            if !last {
                for v in zl.iter_mut() {
                    *v = self.activation.apply(*v);
                }
            }
            a.push(zl);
        }
        let value = a[nl].clone();
        let jacobian = if with_jacobian {
            let k = self.output_dim();
            Some(DMatrix::from_column_slice(k, d, &ta[nl]))
        } else {
            None
        };
        Tape {
            a,
            dphi,
            ddphi,
            ta,
            tz,
            nd,
            value,
            jacobian,
        }
    }

    /// Accumulate `∂/∂θ` of `⟨d_value, S⟩ + ⟨d_jac, ∂S/∂x⟩` into `grad`.
    pub fn backprop(&self, tape: &Tape, d_value: &[f64], d_jac: Option<&DMatrix<f64>>, grad: &mut [f64]) {
        let nl = self.num_layers();
        let nd = if d_jac.is_some() { tape.nd } else { 0 };
        let mut g: Vec<f64> = d_value.to_vec();
        // gt holds one row per direction, like the tangents on the tape
        let mut gt: Vec<f64> = match d_jac {
            Some(dj) if nd > 0 => dj.as_slice().to_vec(),
            _ => Vec::new(),
        };
        let mut abar = Vec::new();
        let mut tbar = Vec::new();
        for l in (0..nl).rev() {
            let (ni, no) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let s = self.offsets[l];
            let prev = &tape.a[l];
            let wgrad = &mut grad[s..s + ni * no];
            for (row, gr) in wgrad.chunks_exact_mut(ni).zip(&g) {
                for (c, p) in row.iter_mut().zip(prev) {
                    *c += gr * p;
                }
            }
            if nd > 0 {
                for (gti, tai) in gt.chunks_exact(no).zip(tape.ta[l].chunks_exact(ni)) {
                    for (row, gi) in wgrad.chunks_exact_mut(ni).zip(gti) {
                        for (c, p) in row.iter_mut().zip(tai) {
                            *c += gi * p;
                        }
                    }
                }
            }
            for (c, gr) in grad[s + ni * no..s + ni * no + no].iter_mut().zip(&g) {
                *c += gr;
            }
            if l == 0 {
                break;
            }
            let w = self.w(l);
            let wt_times = |v: &[f64], out: &mut [f64]| {
                out.fill(0.0);
                for (wr, &vr) in w.chunks_exact(ni).zip(v) {
                    for (o, wv) in out.iter_mut().zip(wr) {
                        *o += wv * vr;
                    }
                }
            };
            abar.resize(ni, 0.0);
            wt_times(&g, &mut abar);
            tbar.resize(nd * ni, 0.0);
            for (gi, tb) in gt.chunks_exact(no).zip(tbar.chunks_exact_mut(ni)) {
                wt_times(gi, tb);
            }
            // layer l−1's pre-activation feeds a_l through φ
            let dp = &tape.dphi[l - 1];
            g.clear();
            g.extend(dp.iter().zip(&abar).map(|(p, b)| p * b));
            if nd > 0 {
                let ddp = &tape.ddphi[l - 1];
                for (tb, tzi) in tbar.chunks_exact(ni).zip(tape.tz[l - 1].chunks_exact(ni)) {
                    for c in 0..ni {
                        g[c] += ddp[c] * tzi[c] * tb[c];
                    }
                }
                gt.resize(nd * ni, 0.0);
                for (gi, tb) in gt.chunks_exact_mut(ni).zip(tbar.chunks_exact(ni)) {
                    for ((o, p), b) in gi.iter_mut().zip(dp).zip(tb) {
                        *o = p * b;
                    }
                }
            }
        }
    }

    /// Serialise to the JSON parameter format.
    pub fn to_json(&self) -> serde_json::Value {
        let layers: Vec<_> = (0..self.num_layers())
            .map(|l| {
                let w = self.weight(l);
                let rows: Vec<Vec<f64>> = (0..w.nrows()).map(|r| w.row(r).iter().copied().collect()).collect();
                (rows, self.bias(l).to_vec())
            })
            .collect();
        serde_json::json!({
            "format_version": FORMAT_VERSION,
            "layer_sizes": self.layer_sizes,
            "activation": self.activation,
            "weights": layers.iter().map(|l| &l.0).collect::<Vec<_>>(),
            "biases": layers.iter().map(|l| &l.1).collect::<Vec<_>>(),
        })
    }

    pub fn from_json(v: &serde_json::Value) -> Result<Self> {
        #[derive(Deserialize)]
        struct Doc {
            format_version: u32,
            layer_sizes: Vec<usize>,
            activation: Activation,
            weights: Vec<Vec<Vec<f64>>>,
            biases: Vec<Vec<f64>>,
        }
        let doc: Doc = serde_json::from_value(v.clone())?;
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "unsupported parameter format version {}",
                doc.format_version
            )));
        }
        let mut p = Self::zeros(&doc.layer_sizes, doc.activation)?;
        if doc.weights.len() != p.num_layers() || doc.biases.len() != p.num_layers() {
            return Err(Error::Config("parameter file has the wrong number of layers".into()));
        }
        for l in 0..p.num_layers() {
            let rows = &doc.weights[l];
            let (i, o) = (p.layer_sizes[l], p.layer_sizes[l + 1]);
            if rows.len() != o || rows.iter().any(|r| r.len() != i) {
                return Err(Error::Config(format!("layer {l} weights do not match its sizes")));
            }
            let flat: Vec<f64> = rows.iter().flatten().copied().collect();
            p.set_layer(l, &DMatrix::from_row_slice(o, i, &flat), &doc.biases[l])?;
        }
        if !p.theta.iter().all(|v| v.is_finite()) {
            return Err(Error::Config("parameter file has non-finite entries".into()));
        }
        Ok(p)
    }
}

/// Intermediate values of one forward pass.
#[derive(Clone, Debug)]
pub struct Tape {
    a: Vec<Vec<f64>>,
    /// `φ'(z_l)` and, with tangents, `φ''(z_l)` for hidden layers.
    dphi: Vec<Vec<f64>>,
    ddphi: Vec<Vec<f64>>,
    ta: Vec<Vec<f64>>,
    tz: Vec<Vec<f64>>,
    /// Number of tangent directions, zero without a Jacobian.
    nd: usize,
    pub value: Vec<f64>,
    pub jacobian: Option<DMatrix<f64>>,
}

/// Gradient of a scalar built from network outputs on a set of inputs.
///
/// `closure` receives the outputs and returns the loss and its derivative
/// with respect to each output.
pub fn loss_gradient<F>(params: &NetworkParams, inputs: &[(f64, Vec<f64>)], closure: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&[Vec<f64>]) -> (f64, Vec<Vec<f64>>),
{
    let mut tapes = Vec::with_capacity(inputs.len());
    for (t, x) in inputs {
        params.check_input(x)?;
        tapes.push(params.record(*t, x, false));
    }
    let outs: Vec<Vec<f64>> = tapes.iter().map(|t| t.value.clone()).collect();
    let (loss, douts) = closure(&outs);
    if !loss.is_finite() {
        return Err(Error::Evaluation("loss".into()));
    }
    let mut grad = vec![0.0; params.theta.len()];
    for (tape, dv) in tapes.iter().zip(&douts) {
        params.backprop(tape, dv, None, &mut grad);
    }
    Ok((loss, grad))
}

/// Adam moment estimates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam step in place. With `β1 = β2 = 0` this is `θ − lr·g/(|g| + ε)`.
pub fn adam_update(theta: &mut [f64], grad: &[f64], state: &mut AdamState, lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
    }
    if grad.len() != theta.len() || state.m.len() != theta.len() {
        return Err(Error::Dimension {
            what: "optimizer state",
            expected: theta.len(),
            got: grad.len(),
        });
    }
    state.step += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..theta.len() {
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * grad[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * grad[i] * grad[i];
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        theta[i] -= lr * mh / (vh.sqrt() + state.eps);
    }
    Ok(())
}

/// Plain gradient step `θ ← θ − lr·g`.
pub fn sgd_update(theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
    if !(lr > 0.0) {
        return Err(Error::Domain(format!("learning rate must be positive, got {lr}")));
    }
    for (t, g) in theta.iter_mut().zip(grad) {
        *t -= lr * g;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            _ => Err(Error::Config(format!("unknown optimizer `{s}` (adam|sgd)"))),
        }
    }
}

impl std::fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

/// Either optimizer behind one interface.
#[derive(Clone, Debug)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(n)),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    pub fn update(&mut self, theta: &mut [f64], grad: &[f64], lr: f64) -> Result<()> {
        match self {
            Optimizer::Adam(s) => adam_update(theta, grad, s, lr),
            Optimizer::Sgd => sgd_update(theta, grad, lr),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_net(seed: u64, act: Activation) -> NetworkParams {
        let mut r = RngStream::new(seed, 0);
        let mut p = NetworkParams::init(&[4, 7, 6, 2], act, &mut r).unwrap();
        // non-zero biases so every code path is exercised
        for l in 0..p.num_layers() {
            let b: Vec<f64> = (0..p.layer_sizes[l + 1]).map(|_| r.random_range(-0.5..0.5)).collect();
            let w = p.weight(l);
            p.set_layer(l, &w, &b).unwrap();
        }
        p
    }

    #[test]
    fn init_shapes_and_determinism() {
        let mut r = RngStream::new(1, 0);
        let p = NetworkParams::init(&[4, 15, 15, 15, 2], Activation::Elu, &mut r).unwrap();
        let shapes: Vec<_> = (0..4).map(|l| p.weight(l).shape()).collect();
        assert_eq!(shapes, vec![(15, 4), (15, 15), (15, 15), (2, 15)]);
        assert!((0..4).all(|l| p.bias(l).iter().all(|&b| b == 0.0)));
        let mut r2 = RngStream::new(1, 0);
        assert_eq!(p, NetworkParams::init(&[4, 15, 15, 15, 2], Activation::Elu, &mut r2).unwrap());
        assert!(NetworkParams::init(&[4, 2], Activation::Elu, &mut r2).is_err());
    }

    #[test]
    fn forward_basics() {
        let p = NetworkParams::zeros(&[4, 5, 2], Activation::Elu).unwrap();
        assert_eq!(p.forward(0.3, &[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
        assert!(p.forward(0.3, &[1.0, 2.0]).is_err());

        let mut lin = NetworkParams::zeros(&[3, 2], Activation::Elu).unwrap();
        let w = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, -1.0, 0.5, 0.25]);
        lin.set_layer(0, &w, &[0.1, -0.1]).unwrap();
        let out = lin.forward(2.0, &[1.0, -4.0]).unwrap();
        assert!((out[0] - (2.0 + 2.0 - 12.0 + 0.1)).abs() < 1e-15);
        assert!((out[1] - (-2.0 + 0.5 - 1.0 - 0.1)).abs() < 1e-15);
        let j = lin.input_jacobian(2.0, &[1.0, -4.0]).unwrap();
        assert_eq!(j, w.columns(1, 2).into_owned());

        // one hidden unit at pre-activation −1 feeding the output with weight 1
        let mut e = NetworkParams::zeros(&[2, 1, 1], Activation::Elu).unwrap();
        e.set_layer(0, &DMatrix::from_element(1, 2, 0.0), &[-1.0]).unwrap();
        e.set_layer(1, &DMatrix::from_element(1, 1, 1.0), &[0.0]).unwrap();
        assert!((e.forward(0.0, &[0.0]).unwrap()[0] - (-0.632_120_558_828_557_7)).abs() < 1e-15);
    }

    #[test]
    fn zero_theta_has_zero_jacobian_and_gradient_of_square() {
        let p = NetworkParams::zeros(&[4, 5, 5, 2], Activation::Elu).unwrap();
        assert_eq!(p.input_jacobian(0.5, &[1.0, 2.0, 3.0]).unwrap(), DMatrix::zeros(2, 3));
        let inputs = vec![(0.5, vec![1.0, 2.0, 3.0]), (0.1, vec![-1.0, 0.0, 1.0])];
        let (l, g) = loss_gradient(&p, &inputs, |outs| {
            let l = outs.iter().flatten().map(|v| v * v).sum();
            (l, outs.iter().map(|o| o.iter().map(|v| 2.0 * v).collect()).collect())
        })
        .unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
        let (_, g) = loss_gradient(&random_net(2, Activation::Elu), &inputs, |outs| {
            (3.0, outs.iter().map(|o| vec![0.0; o.len()]).collect())
        })
        .unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / (a.abs().max(b.abs()).max(1e-3))
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        for seed in 0..20 {
            let p = random_net(seed, Activation::Elu);
            let mut r = RngStream::new(100 + seed, 0);
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.5..1.5)).collect();
            let t = r.random_range(0.05..1.0);
            let j = p.input_jacobian(t, &x).unwrap();
            for i in 0..3 {
                let h = 1e-5;
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += h;
                xm[i] -= h;
                let fp = p.forward(t, &xp).unwrap();
                let fm = p.forward(t, &xm).unwrap();
                for k in 0..2 {
                    assert!(rel_err(j[(k, i)], (fp[k] - fm[k]) / (2.0 * h)) < 1e-4);
                }
            }
        }
    }

    /// Scalar mixing outputs and the Jacobian: Σ c·S + Σ D ⊙ ∂S/∂x + ‖S‖².
    fn mixed_scalar(p: &NetworkParams, t: f64, x: &[f64], c: &[f64], dj: &DMatrix<f64>) -> f64 {
        let tape = p.record(t, x, true);
        let j = tape.jacobian.unwrap();
        let s = &tape.value;
        s.iter().zip(c).map(|(a, b)| a * b).sum::<f64>() + j.component_mul(dj).sum() + s.iter().map(|v| v * v).sum::<f64>()
    }

    #[test]
    fn theta_gradient_through_jacobian_matches_finite_differences() {
        for seed in 0..20 {
            let p = random_net(seed, Activation::Elu);
            let mut r = RngStream::new(200 + seed, 0);
            let x: Vec<f64> = (0..3).map(|_| r.random_range(-1.5..1.5)).collect();
            let t = r.random_range(0.05..1.0);
            let c: Vec<f64> = (0..2).map(|_| r.random_range(-1.0..1.0)).collect();
            let dj = DMatrix::from_fn(2, 3, |_, _| r.random_range(-1.0..1.0));
            let tape = p.record(t, &x, true);
            let dv: Vec<f64> = tape.value.iter().zip(&c).map(|(s, c)| c + 2.0 * s).collect();
            let mut g = vec![0.0; p.theta().len()];
            p.backprop(&tape, &dv, Some(&dj), &mut g);
            for idx in 0..g.len() {
                let h = 1e-5;
                let mut pp = p.clone();
                pp.theta_mut()[idx] += h;
                let mut pm = p.clone();
                pm.theta_mut()[idx] -= h;
                let fd = (mixed_scalar(&pp, t, &x, &c, &dj) - mixed_scalar(&pm, t, &x, &c, &dj)) / (2.0 * h);
                assert!(rel_err(g[idx], fd) < 1e-4, "seed {seed} idx {idx}: {} vs {fd}", g[idx]);
            }
        }
    }

    #[test]
    fn json_round_trip() {
        let p = random_net(5, Activation::Relu);
        let v = p.to_json();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["weights"][0].as_array().unwrap().len(), 7);
        let q = NetworkParams::from_json(&v).unwrap();
        assert_eq!(p, q);
        // through text as well, which needs exact float parsing
        let text: serde_json::Value = serde_json::from_str(&v.to_string()).unwrap();
        assert_eq!(NetworkParams::from_json(&text).unwrap(), p);
        let mut bad = v.clone();
        bad["format_version"] = serde_json::json!(9);
        assert!(NetworkParams::from_json(&bad).is_err());
    }

    #[test]
    fn adam_behaviour() {
        let mut th = vec![1.0, -2.0];
        let mut s = AdamState::new(2);
        adam_update(&mut th, &[0.0, 0.0], &mut s, 0.1).unwrap();
        assert_eq!(th, vec![1.0, -2.0]);
        assert_eq!(s.step, 1);

        let mut s0 = AdamState::new(2);
        s0.beta1 = 0.0;
        s0.beta2 = 0.0;
        let mut th = vec![1.0, -2.0];
        adam_update(&mut th, &[0.5, -4.0], &mut s0, 0.1).unwrap();
        assert!((th[0] - (1.0 - 0.1 * 0.5 / (0.5 + 1e-8))).abs() < 1e-15);
        assert!((th[1] - (-2.0 + 0.1 * 4.0 / (4.0 + 1e-8))).abs() < 1e-15);

        let mut a = (vec![0.3, 0.4], AdamState::new(2));
        let mut b = a.clone();
        adam_update(&mut a.0, &[0.1, 0.2], &mut a.1, 0.01).unwrap();
        adam_update(&mut b.0, &[0.1, 0.2], &mut b.1, 0.01).unwrap();
        assert_eq!(a, b);
        assert!(adam_update(&mut a.0, &[0.1, 0.2], &mut a.1, 0.0).is_err());

        let mut th = vec![1.0];
        sgd_update(&mut th, &[2.0], 0.25).unwrap();
        assert_eq!(th, vec![0.5]);
    }
}
