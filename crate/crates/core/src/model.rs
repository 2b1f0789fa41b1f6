//! First-order opinion dynamics: agent states, influence kernels, the
//! pairwise-interaction right-hand side and consensus diagnostics.
//!
//! Every interacting system in this crate (full agents, cluster centers,
//! POD-reduced coordinates) has the same shape
//!
//! ```text
//! dx_l/dt = (1/n) sum_m w_m phi(|x_l - x_m|) (x_m - x_l) + u_l
//! ```
//!
//! with unit weights and `n = N` for the full model, and cluster sizes as
//! weights for the center-of-mass system. [`Interaction`] carries the
//! kernel, weights and normalization.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};

/// Agent states at one instant. Row `i` is agent `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentEnsemble {
    states: Array2<f64>,
    time: f64,
}

impl AgentEnsemble {
    pub fn new(states: Array2<f64>, time: f64) -> Result<Self> {
        let (n, d) = states.dim();
        if n == 0 || d == 0 {
            return Err(Error::InvalidEnsemble(format!(
                "need at least one agent and one dimension, got {n}x{d}"
            )));
        }
        if !states.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidEnsemble("non-finite state entry".into()));
        }
        if !time.is_finite() {
            return Err(Error::InvalidEnsemble("non-finite time".into()));
        }
        Ok(Self { states, time })
    }

    pub fn from_rows(rows: &[Vec<f64>], time: f64) -> Result<Self> {
        let n = rows.len();
        let d = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::InvalidEnsemble("ragged rows".into()));
        }
        let flat: Vec<f64> = rows.iter().flatten().copied().collect();
        let states = Array2::from_shape_vec((n, d), flat)
            .map_err(|e| Error::InvalidEnsemble(e.to_string()))?;
        Self::new(states, time)
    }

    pub fn states(&self) -> ArrayView2<'_, f64> {
        self.states.view()
    }

    pub fn into_states(self) -> Array2<f64> {
        self.states
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn agents(&self) -> usize {
        self.states.nrows()
    }

    pub fn dim(&self) -> usize {
        self.states.ncols()
    }
}

/// Interaction function `phi` together with its derivative.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfluenceKernel {
    /// Sigmoid-smoothed Hegselmann–Krause kernel with unit range.
    SmoothedGhk { alpha: f64 },
    Constant { c: f64 },
}

impl InfluenceKernel {
    pub fn ghk(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Domain(format!("GHK alpha must be positive, got {alpha}")));
        }
        Ok(Self::SmoothedGhk { alpha })
    }

    pub fn constant(c: f64) -> Result<Self> {
        if !(c > 0.0 && c <= 1.0) {
            return Err(Error::Domain(format!("constant kernel needs c in (0,1], got {c}")));
        }
        Ok(Self::Constant { c })
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::SmoothedGhk { alpha } => Self::ghk(alpha).map(|_| ()),
            Self::Constant { c } => Self::constant(c).map(|_| ()),
        }
    }

    #[inline]
    pub fn value(&self, s: f64) -> f64 {
        match *self {
            Self::SmoothedGhk { alpha } => ghk_value(s, alpha),
            Self::Constant { c } => c,
        }
    }

    #[inline]
    pub fn derivative(&self, s: f64) -> f64 {
        match *self {
            Self::SmoothedGhk { alpha } => ghk_slope(s, alpha),
            Self::Constant { .. } => 0.0,
        }
    }

    /// `(phi(s), phi'(s))` sharing one exponential.
    #[inline]
    pub fn value_and_derivative(&self, s: f64) -> (f64, f64) {
        match *self {
            Self::SmoothedGhk { alpha } => {
                let scale = 1.0 + (-alpha).exp();
                let e = (alpha * (s - 1.0)).exp();
                let value = scale / (1.0 + e);
                let slope = -alpha * scale / ((1.0 + e) * (1.0 + e.recip()));
                (value, slope)
            }
            Self::Constant { c } => (c, 0.0),
        }
    }
}

// 1 - sig(a(s-1)) = 1 / (1 + e^{a(s-1)}) and 1 / (1 - sig(-a)) = 1 + e^{-a};
// this form never subtracts nearly equal numbers.
#[inline]
fn ghk_value(s: f64, alpha: f64) -> f64 {
    (1.0 + (-alpha).exp()) / (1.0 + (alpha * (s - 1.0)).exp())
}

#[inline]
fn ghk_slope(s: f64, alpha: f64) -> f64 {
    let e = (alpha * (s - 1.0)).exp();
    // e / (1 + e)^2 written so that e = inf gives 0 rather than NaN
    -alpha * (1.0 + (-alpha).exp()) / ((1.0 + e) * (1.0 + e.recip()))
}

fn check_ghk_args(s: f64, alpha: f64) -> Result<()> {
    if !s.is_finite() || s < 0.0 {
        return Err(Error::Domain(format!("distance must be finite and non-negative, got {s}")));
    }
    if !(alpha.is_finite() && alpha > 0.0) {
        return Err(Error::Domain(format!("GHK alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// Smoothed generalized Hegselmann–Krause kernel
/// `(1 - sig(alpha (s - 1))) / (1 - sig(-alpha))`.
pub fn ghk_eval(s: f64, alpha: f64) -> Result<f64> {
    check_ghk_args(s, alpha)?;
    Ok(ghk_value(s, alpha))
}

/// Derivative of [`ghk_eval`] in `s`.
pub fn ghk_derivative(s: f64, alpha: f64) -> Result<f64> {
    check_ghk_args(s, alpha)?;
    Ok(ghk_slope(s, alpha))
}

/// Kernel, per-entity weights and the normalization constant of an
/// interacting system.
#[derive(Debug, Clone, Copy)]
pub struct Interaction<'a> {
    pub kernel: InfluenceKernel,
    /// `None` means unit weights.
    pub weights: Option<&'a [f64]>,
    pub normalization: f64,
}

impl<'a> Interaction<'a> {
    /// Plain agent model: unit weights, normalization `agents`.
    pub fn uniform(kernel: InfluenceKernel, agents: usize) -> Self {
        Self {
            kernel,
            weights: None,
            normalization: agents as f64,
        }
    }

    pub fn weighted(kernel: InfluenceKernel, weights: &'a [f64], normalization: f64) -> Self {
        Self {
            kernel,
            weights: Some(weights),
            normalization,
        }
    }

    #[inline]
    pub fn weight(&self, i: usize) -> f64 {
        self.weights.map_or(1.0, |w| w[i])
    }

    pub(crate) fn check_entities(&self, n: usize) -> Result<()> {
        match self.weights {
            Some(w) if w.len() != n => Err(Error::Shape {
                expected: (n, 1),
                got: (w.len(), 1),
            }),
            _ => Ok(()),
        }
    }

    /// Uncontrolled drift. Row `l` is
    /// `(1/n) sum_m w_m phi(|x_l - x_m|) (x_m - x_l)`.
    pub fn drift(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let n = x.nrows();
        let geo = PairGeometry::new(x);
        let mut coupling = Array2::<f64>::zeros((n, n));
        for l in 0..n {
            for m in (l + 1)..n {
                let phi = self.kernel.value(geo.distance[[l, m]]);
                coupling[[l, m]] = phi * self.weight(m);
                coupling[[m, l]] = phi * self.weight(l);
            }
        }
        // sum_m a_lm (x_m - x_l) = (A xc)_l - (sum_m a_lm) xc_l
        let mut out = coupling.dot(&geo.centered);
        for (l, mut row) in out.rows_mut().into_iter().enumerate() {
            let total = coupling.row(l).sum();
            row.scaled_add(-total, &geo.centered.row(l));
        }
        out /= self.normalization;
        out
    }
}

/// Mean-centered states with their pairwise distance matrix.
///
/// Distances come from the Gram matrix of the centered states, so their
/// rounding error scales with the spread of the ensemble rather than with
/// its distance from the origin.
pub(crate) struct PairGeometry {
    pub centered: Array2<f64>,
    pub distance: Array2<f64>,
}

impl PairGeometry {
    pub fn new(x: ArrayView2<f64>) -> Self {
        let n = x.nrows();
        let centered = &x - &mean_state(x);
        let gram = centered.dot(&centered.t());
        let mut distance = Array2::zeros((n, n));
        for l in 0..n {
            for m in (l + 1)..n {
                let s2 = gram[[l, l]] + gram[[m, m]] - 2.0 * gram[[l, m]];
                let s = s2.max(0.0).sqrt();
                distance[[l, m]] = s;
                distance[[m, l]] = s;
            }
        }
        Self { centered, distance }
    }
}

/// Right-hand side of the uncontrolled agent model.
pub fn rhs_uncontrolled(x: ArrayView2<f64>, kernel: &InfluenceKernel) -> Array2<f64> {
    Interaction::uniform(*kernel, x.nrows()).drift(x)
}

/// Right-hand side with an additive control field.
pub fn rhs_controlled(
    x: ArrayView2<f64>,
    u: ArrayView2<f64>,
    kernel: &InfluenceKernel,
) -> Result<Array2<f64>> {
    check_shape(x.dim(), u.dim())?;
    Ok(rhs_uncontrolled(x, kernel) + u)
}

pub fn mean_state(x: ArrayView2<f64>) -> Array1<f64> {
    x.mean_axis(Axis(0)).expect("at least one row")
}

/// `(1/N^2) sum_i |x_i - mean|^2`.
pub fn consensus_parameter(x: ArrayView2<f64>) -> f64 {
    let n = x.nrows() as f64;
    let mean = mean_state(x);
    let total: f64 = x
        .rows()
        .into_iter()
        .map(|row| squared_distance(row, mean.view()))
        .sum();
    total / (n * n)
}

pub(crate) fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Largest Euclidean distance between two rows.
pub fn max_pairwise_distance(x: ArrayView2<f64>) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..x.nrows() {
        for j in (i + 1)..x.nrows() {
            best = best.max(squared_distance(x.row(i), x.row(j)));
        }
    }
    best.sqrt()
}
