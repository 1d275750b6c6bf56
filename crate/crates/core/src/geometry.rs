//! Sub-Riemannian models in coordinates: frames, drift, the flat connection,
//! brackets, adapted charts and the box-metric score surrogate.
//!
//! A model describes `k` horizontal vector fields `σ_1..σ_k` on `R^d` as the
//! columns of a `d × k` matrix, plus `d − k` extension fields completing a
//! frame of the tangent space. Frame derivatives come from central finite
//! differences unless the model provides them analytically.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::heisenberg::HeisenbergModel;

/// A point in the coordinate chart.
pub type Point = DVector<f64>;

/// Default step for central finite differences of frame entries.
pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Charts whose full frame has a determinant below this are rejected.
pub const SINGULAR_DET: f64 = 1e-12;

/// Coefficients of a horizontal vector in the frame `σ_1..σ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizontalCoefficients(pub DVector<f64>);

impl HorizontalCoefficients {
    pub fn zeros(k: usize) -> Self {
        HorizontalCoefficients(DVector::zeros(k))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }

    /// Push the coefficients forward to an ambient vector `Σ_j c^j σ_j`.
    pub fn to_ambient(&self, frame: &DMatrix<f64>) -> DVector<f64> {
        frame * &self.0
    }
}

/// Geometry of a step-2 sub-Riemannian structure in a single chart.
pub trait SubRiemannianModel: Send + Sync {
    /// Coordinate dimension `d`.
    fn dim(&self) -> usize;

    /// Rank `k` of the horizontal bundle.
    fn rank(&self) -> usize;

    /// Horizontal frame at `x`, a `d × k` matrix with columns `σ_j`.
    fn frame(&self, x: &Point) -> DMatrix<f64>;

    /// Extension fields at `x`, a `d × (d − k)` matrix.
    fn frame_extension(&self, x: &Point) -> DMatrix<f64>;

    /// The vector field `Z` in `L = Δ + 2Z`.
    fn drift(&self, _x: &Point) -> DVector<f64> {
        DVector::zeros(self.dim())
    }

    /// Analytic `∂_{x^l}` of the frame matrix, when known.
    fn frame_partial(&self, _l: usize, _x: &Point) -> Option<DMatrix<f64>> {
        None
    }

    fn fd_step(&self) -> f64 {
        DEFAULT_FD_STEP
    }

    /// Adapted-coordinate weights: 1 for the first `k` coordinates, 2 after.
    fn weights(&self) -> Vec<u8> {
        let k = self.rank();
        (0..self.dim()).map(|i| if i < k { 1 } else { 2 }).collect()
    }

    /// Exact one-step map for models that have one (a Lie group law).
    ///
    /// `dw` is the Brownian increment and `levy` the `k × k` area matrix.
    fn group_step(&self, _x: &Point, _dw: &DVector<f64>, _levy: &DMatrix<f64>) -> Option<Point> {
        None
    }
}

fn check_point(model: &(impl SubRiemannianModel + ?Sized), x: &Point) -> Result<()> {
    if x.len() != model.dim() {
        return Err(Error::Dimension {
            what: "point",
            expected: model.dim(),
            got: x.len(),
        });
    }
    Ok(())
}

fn check_index(model: &(impl SubRiemannianModel + ?Sized), j: usize) -> Result<()> {
    if j >= model.rank() {
        return Err(Error::Index {
            what: "frame field",
            index: j,
            len: model.rank(),
        });
    }
    Ok(())
}

fn finite_matrix(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(m)
    } else {
        Err(Error::Evaluation(what.to_string()))
    }
}

/// Frame at `x`, checked for dimensions and finiteness.
pub fn eval_frame(model: &(impl SubRiemannianModel + ?Sized), x: &Point) -> Result<DMatrix<f64>> {
    check_point(model, x)?;
    let f = model.frame(x);
    if f.nrows() != model.dim() || f.ncols() != model.rank() {
        return Err(Error::Dimension {
            what: "frame columns",
            expected: model.rank(),
            got: f.ncols(),
        });
    }
    finite_matrix(f, "frame")
}

/// `∂_{x^l}` of the frame matrix, analytic if available, else central differences.
pub fn frame_partial(
    model: &(impl SubRiemannianModel + ?Sized),
    l: usize,
    x: &Point,
) -> Result<DMatrix<f64>> {
    check_point(model, x)?;
    if l >= model.dim() {
        return Err(Error::Index {
            what: "coordinate",
            index: l,
            len: model.dim(),
        });
    }
    if let Some(p) = model.frame_partial(l, x) {
        return finite_matrix(p, "analytic frame derivative");
    }
    fd_frame_partial(model, l, x)
}

/// Central-difference `∂_{x^l}` of the frame, ignoring any analytic override.
pub fn fd_frame_partial(
    model: &(impl SubRiemannianModel + ?Sized),
    l: usize,
    x: &Point,
) -> Result<DMatrix<f64>> {
    let h = model.fd_step();
    let mut xp = x.clone();
    let mut xm = x.clone();
    xp[l] += h;
    xm[l] -= h;
    let fp = eval_frame(model, &xp)?;
    let fm = eval_frame(model, &xm)?;
    Ok((fp - fm) / (2.0 * h))
}

/// The frame at a point together with all of its coordinate partials.
#[derive(Clone, Debug)]
pub struct FrameJet {
    pub frame: DMatrix<f64>,
    /// `partials[l] = ∂_{x^l} frame`.
    pub partials: Vec<DMatrix<f64>>,
}

impl FrameJet {
    pub fn at(model: &(impl SubRiemannianModel + ?Sized), x: &Point) -> Result<Self> {
        let frame = eval_frame(model, x)?;
        let partials = (0..model.dim())
            .map(|l| frame_partial(model, l, x))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrameJet { frame, partials })
    }

    /// `∇̄_{σ_{j1}} σ_{j2} = Σ_l σ^l_{j1} ∂_l σ_{j2}`.
    pub fn connection(&self, j1: usize, j2: usize) -> DVector<f64> {
        let d = self.frame.nrows();
        let mut out = DVector::zeros(d);
        for (l, p) in self.partials.iter().enumerate() {
            let w = self.frame[(l, j1)];
            if w != 0.0 {
                out.axpy(w, &p.column(j2), 1.0);
            }
        }
        out
    }

    pub fn bracket(&self, j1: usize, j2: usize) -> DVector<f64> {
        self.connection(j1, j2) - self.connection(j2, j1)
    }

    /// Coordinate divergence `Σ_i ∂_i σ^i_j`.
    pub fn divergence(&self, j: usize) -> f64 {
        self.partials.iter().enumerate().map(|(i, p)| p[(i, j)]).sum()
    }
}

/// Flat connection `∇̄_{σ_{j1}} σ_{j2}` at `x`.
pub fn flat_connection(
    model: &(impl SubRiemannianModel + ?Sized),
    j1: usize,
    j2: usize,
    x: &Point,
) -> Result<DVector<f64>> {
    check_index(model, j1)?;
    check_index(model, j2)?;
    Ok(FrameJet::at(model, x)?.connection(j1, j2))
}

/// Lie bracket `[σ_{j1}, σ_{j2}]` at `x`.
pub fn lie_bracket(
    model: &(impl SubRiemannianModel + ?Sized),
    j1: usize,
    j2: usize,
    x: &Point,
) -> Result<DVector<f64>> {
    check_index(model, j1)?;
    check_index(model, j2)?;
    Ok(FrameJet::at(model, x)?.bracket(j1, j2))
}

/// `σ_0 = ½ Σ_j (div σ_j) σ_j + Z`, the drift of the Stratonovich SDE
/// whose generator is `½Δ + Z`.
pub fn stratonovich_drift(model: &(impl SubRiemannianModel + ?Sized), x: &Point) -> Result<DVector<f64>> {
    let jet = FrameJet::at(model, x)?;
    stratonovich_drift_from_jet(model, &jet, x)
}

pub(crate) fn stratonovich_drift_from_jet(
    model: &(impl SubRiemannianModel + ?Sized),
    jet: &FrameJet,
    x: &Point,
) -> Result<DVector<f64>> {
    let mut out = model.drift(x);
    if out.len() != model.dim() || !out.iter().all(|v| v.is_finite()) {
        return Err(Error::Evaluation("drift".into()));
    }
    for j in 0..model.rank() {
        let div = jet.divergence(j);
        out.axpy(0.5 * div, &jet.frame.column(j), 1.0);
    }
    Ok(out)
}

/// Itô drift `τ_0 = σ_0 + ½ Σ_j ∇̄_{σ_j} σ_j`.
pub fn ito_drift(model: &(impl SubRiemannianModel + ?Sized), x: &Point) -> Result<DVector<f64>> {
    let jet = FrameJet::at(model, x)?;
    ito_drift_from_jet(model, &jet, x)
}

pub(crate) fn ito_drift_from_jet(
    model: &(impl SubRiemannianModel + ?Sized),
    jet: &FrameJet,
    x: &Point,
) -> Result<DVector<f64>> {
    let mut out = stratonovich_drift_from_jet(model, jet, x)?;
    for j in 0..model.rank() {
        out.axpy(0.5, &jet.connection(j, j), 1.0);
    }
    Ok(out)
}

/// Full frame `[σ(x) | extension(x)]` as a `d × d` matrix.
pub fn full_frame(model: &(impl SubRiemannianModel + ?Sized), x: &Point) -> Result<DMatrix<f64>> {
    let d = model.dim();
    let k = model.rank();
    let f = eval_frame(model, x)?;
    let e = finite_matrix(model.frame_extension(x), "frame extension")?;
    if e.nrows() != d || e.ncols() != d - k {
        return Err(Error::Dimension {
            what: "frame extension columns",
            expected: d - k,
            got: e.ncols(),
        });
    }
    let mut full = DMatrix::zeros(d, d);
    full.columns_mut(0, k).copy_from(&f);
    full.columns_mut(k, d - k).copy_from(&e);
    Ok(full)
}

/// Checks the step-2 restriction: weights are 1 then 2, and at `x` the frame
/// together with its pairwise brackets spans `R^d`.
pub fn check_step2(model: &(impl SubRiemannianModel + ?Sized), x: &Point) -> Result<()> {
    let d = model.dim();
    let k = model.rank();
    if k == 0 || k > d {
        return Err(Error::Unsupported(format!("rank {k} for dimension {d}")));
    }
    let w = model.weights();
    if w.len() != d || w.iter().enumerate().any(|(i, &v)| v != if i < k { 1 } else { 2 }) {
        return Err(Error::Unsupported(
            "weights must be 1 on the first k coordinates and 2 after".into(),
        ));
    }
    let jet = FrameJet::at(model, x)?;
    let mut cols: Vec<DVector<f64>> = (0..k).map(|j| jet.frame.column(j).into_owned()).collect();
    for a in 0..k {
        for b in (a + 1)..k {
            cols.push(jet.bracket(a, b));
        }
    }
    let span = DMatrix::from_columns(&cols);
    let rank = span.rank(1e-8);
    if rank < d {
        return Err(Error::Unsupported(format!(
            "frame and brackets span only {rank} of {d} directions; step > 2 is not supported"
        )));
    }
    Ok(())
}

/// Linear adapted coordinates centred at `base`: `y = inverse_frame · (x − base)`.
#[derive(Clone, Debug)]
pub struct AdaptedChart {
    pub base: Point,
    pub inverse_frame: DMatrix<f64>,
    pub rank: usize,
    /// Per-coordinate constants `c_i` of the box metric.
    pub scales: DVector<f64>,
}

impl AdaptedChart {
    pub fn apply(&self, x: &Point) -> DVector<f64> {
        &self.inverse_frame * (x - &self.base)
    }

    /// Replace the box-metric constants.
    pub fn with_scales(mut self, scales: DVector<f64>) -> Result<Self> {
        if scales.len() != self.base.len() {
            return Err(Error::Dimension {
                what: "chart scales",
                expected: self.base.len(),
                got: scales.len(),
            });
        }
        self.scales = scales;
        Ok(self)
    }
}

/// Adapted chart at `x0` built from the inverse of the full frame there.
pub fn adapted_chart(model: &(impl SubRiemannianModel + ?Sized), x0: &Point) -> Result<AdaptedChart> {
    let full = full_frame(model, x0)?;
    let det = full.determinant();
    if !det.is_finite() || det.abs() < SINGULAR_DET {
        return Err(Error::SingularFrame { det });
    }
    let inv = full
        .clone()
        .try_inverse()
        .ok_or(Error::SingularFrame { det })?;
    let d = model.dim();
    let residual = (&inv * &full - DMatrix::<f64>::identity(d, d)).amax();
    if residual > 1e-10 {
        return Err(Error::SingularFrame { det });
    }
    Ok(AdaptedChart {
        base: x0.clone(),
        inverse_frame: inv,
        rank: model.rank(),
        scales: DVector::from_element(d, 1.0),
    })
}

pub(crate) fn sgn(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Box-metric surrogate `Σ_{i≤k} c_i |y^i|² + Σ_{i>k} c_i |y^i|`.
pub fn dhat_squared(chart: &AdaptedChart, x: &Point) -> f64 {
    let y = chart.apply(x);
    y.iter()
        .enumerate()
        .map(|(i, &v)| {
            let c = chart.scales[i];
            if i < chart.rank {
                c * v * v
            } else {
                c * v.abs()
            }
        })
        .sum()
}

/// Approximate score `Ŝ_t = −(1/2t) ∇^E d̂²` in frame coefficients.
pub fn approx_score(
    model: &(impl SubRiemannianModel + ?Sized),
    chart: &AdaptedChart,
    x: &Point,
    t: f64,
) -> Result<HorizontalCoefficients> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("score time must be positive, got {t}")));
    }
    let frame = eval_frame(model, x)?;
    let y = chart.apply(x);
    // m[(i, j)] = σ_j y^i
    let m = &chart.inverse_frame * &frame;
    let k = model.rank();
    let mut s = DVector::zeros(k);
    for j in 0..k {
        let mut acc = 0.0;
        for i in 0..y.len() {
            let c = chart.scales[i];
            if i < chart.rank {
                acc += c * m[(i, j)] * y[i] / t;
            } else {
                acc += c * m[(i, j)] * sgn(y[i]) / (2.0 * t);
            }
        }
        s[j] = -acc;
    }
    Ok(HorizontalCoefficients(s))
}

/// Flat `R^d` with the identity frame and a constant drift.
#[derive(Clone, Debug)]
pub struct EuclideanModel {
    pub d: usize,
    pub drift: DVector<f64>,
}

impl EuclideanModel {
    pub fn new(d: usize) -> Self {
        EuclideanModel {
            d,
            drift: DVector::zeros(d),
        }
    }

    pub fn with_drift(drift: DVector<f64>) -> Self {
        EuclideanModel {
            d: drift.len(),
            drift,
        }
    }
}

impl SubRiemannianModel for EuclideanModel {
    fn dim(&self) -> usize {
        self.d
    }
    fn rank(&self) -> usize {
        self.d
    }
    fn frame(&self, _x: &Point) -> DMatrix<f64> {
        DMatrix::identity(self.d, self.d)
    }
    fn frame_extension(&self, _x: &Point) -> DMatrix<f64> {
        DMatrix::zeros(self.d, 0)
    }
    fn drift(&self, _x: &Point) -> DVector<f64> {
        self.drift.clone()
    }
    fn frame_partial(&self, _l: usize, _x: &Point) -> Option<DMatrix<f64>> {
        Some(DMatrix::zeros(self.d, self.d))
    }
}

/// Fields that are affine in the coordinates: `σ_j(x) = c_j + A_j x`.
///
/// Enough to describe nilpotent step-2 groups and simple perturbations of
/// them from a config file.
#[derive(Clone, Debug)]
pub struct AffineModel {
    pub frame_offset: DMatrix<f64>,
    pub frame_linear: Vec<DMatrix<f64>>,
    pub extension_offset: DMatrix<f64>,
    pub extension_linear: Vec<DMatrix<f64>>,
    pub drift_offset: DVector<f64>,
}

impl AffineModel {
    /// Validates shapes; step-2 spanning is checked separately with [`check_step2`].
    pub fn new(
        frame_offset: DMatrix<f64>,
        frame_linear: Vec<DMatrix<f64>>,
        extension_offset: DMatrix<f64>,
        extension_linear: Vec<DMatrix<f64>>,
        drift_offset: DVector<f64>,
    ) -> Result<Self> {
        let d = frame_offset.nrows();
        let k = frame_offset.ncols();
        if k == 0 || k > d {
            return Err(Error::Config(format!("frame must be d×k with 1 ≤ k ≤ d, got {d}×{k}")));
        }
        if frame_linear.len() != k {
            return Err(Error::Dimension {
                what: "frame_linear blocks",
                expected: k,
                got: frame_linear.len(),
            });
        }
        if extension_offset.nrows() != d || extension_offset.ncols() != d - k {
            return Err(Error::Dimension {
                what: "extension columns",
                expected: d - k,
                got: extension_offset.ncols(),
            });
        }
        if extension_linear.len() != d - k {
            return Err(Error::Dimension {
                what: "extension_linear blocks",
                expected: d - k,
                got: extension_linear.len(),
            });
        }
        for a in frame_linear.iter().chain(extension_linear.iter()) {
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::Dimension {
                    what: "linear block",
                    expected: d,
                    got: a.ncols(),
                });
            }
        }
        if drift_offset.len() != d {
            return Err(Error::Dimension {
                what: "drift",
                expected: d,
                got: drift_offset.len(),
            });
        }
        Ok(AffineModel {
            frame_offset,
            frame_linear,
            extension_offset,
            extension_linear,
            drift_offset,
        })
    }
}

impl SubRiemannianModel for AffineModel {
    fn dim(&self) -> usize {
        self.frame_offset.nrows()
    }
    fn rank(&self) -> usize {
        self.frame_offset.ncols()
    }
    fn frame(&self, x: &Point) -> DMatrix<f64> {
        let mut f = self.frame_offset.clone();
        for (j, a) in self.frame_linear.iter().enumerate() {
            f.column_mut(j).gemv(1.0, a, x, 1.0);
        }
        f
    }
    fn frame_extension(&self, x: &Point) -> DMatrix<f64> {
        let mut f = self.extension_offset.clone();
        for (j, a) in self.extension_linear.iter().enumerate() {
            f.column_mut(j).gemv(1.0, a, x, 1.0);
        }
        f
    }
    fn drift(&self, _x: &Point) -> DVector<f64> {
        self.drift_offset.clone()
    }
    fn frame_partial(&self, l: usize, _x: &Point) -> Option<DMatrix<f64>> {
        let d = self.dim();
        let mut p = DMatrix::zeros(d, self.rank());
        for (j, a) in self.frame_linear.iter().enumerate() {
            p.column_mut(j).copy_from(&a.column(l));
        }
        Some(p)
    }
}

/// The geometries the command line can build.
#[derive(Clone, Debug)]
pub enum Geometry {
    Euclidean(EuclideanModel),
    Heisenberg(HeisenbergModel),
    Affine(AffineModel),
}

impl Geometry {
    pub fn name(&self) -> &'static str {
        match self {
            Geometry::Euclidean(_) => "euclidean",
            Geometry::Heisenberg(_) => "heisenberg",
            Geometry::Affine(_) => "custom-step2",
        }
    }

    pub fn as_heisenberg(&self) -> Option<&HeisenbergModel> {
        match self {
            Geometry::Heisenberg(h) => Some(h),
            _ => None,
        }
    }

    fn inner(&self) -> &dyn SubRiemannianModel {
        match self {
            Geometry::Euclidean(m) => m,
            Geometry::Heisenberg(m) => m,
            Geometry::Affine(m) => m,
        }
    }
}

impl SubRiemannianModel for Geometry {
    fn dim(&self) -> usize {
        self.inner().dim()
    }
    fn rank(&self) -> usize {
        self.inner().rank()
    }
    fn frame(&self, x: &Point) -> DMatrix<f64> {
        self.inner().frame(x)
    }
    fn frame_extension(&self, x: &Point) -> DMatrix<f64> {
        self.inner().frame_extension(x)
    }
    fn drift(&self, x: &Point) -> DVector<f64> {
        self.inner().drift(x)
    }
    fn frame_partial(&self, l: usize, x: &Point) -> Option<DMatrix<f64>> {
        self.inner().frame_partial(l, x)
    }
    fn fd_step(&self) -> f64 {
        self.inner().fd_step()
    }
    fn weights(&self) -> Vec<u8> {
        self.inner().weights()
    }
    fn group_step(&self, x: &Point, dw: &DVector<f64>, levy: &DMatrix<f64>) -> Option<Point> {
        self.inner().group_step(x, dw, levy)
    }
}
