//! Fixed-step RK4 integration, truncated SVD and central-difference
//! gradients.

use nalgebra::DMatrix;
use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default integrator step.
pub const DEFAULT_STEP: f64 = 0.05;

/// Sampled solution on a uniform or non-uniform time grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    times: Vec<f64>,
    states: Vec<Array2<f64>>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, states: Vec<Array2<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != states.len() {
            return Err(Error::Config(format!(
                "trajectory needs matching non-empty times ({}) and states ({})",
                times.len(),
                states.len()
            )));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("trajectory times must increase strictly".into()));
        }
        let shape = states[0].dim();
        if states.iter().any(|s| s.dim() != shape) {
            return Err(Error::Config("trajectory states must share one shape".into()));
        }
        Ok(Self { times, states })
    }

    pub(crate) fn from_parts_unchecked(times: Vec<f64>, states: Vec<Array2<f64>>) -> Self {
        Self { times, states }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[Array2<f64>] {
        &self.states
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> &Array2<f64> {
        &self.states[0]
    }

    pub fn last(&self) -> &Array2<f64> {
        self.states.last().expect("non-empty trajectory")
    }

    pub fn into_states(self) -> Vec<Array2<f64>> {
        self.states
    }

    /// Piecewise-linear interpolation, clamped to the sampled range.
    pub fn interpolate(&self, t: f64) -> Array2<f64> {
        let times = &self.times;
        if t <= times[0] {
            return self.states[0].clone();
        }
        if t >= *times.last().unwrap() {
            return self.last().clone();
        }
        let hi = times.partition_point(|&s| s <= t);
        let lo = hi - 1;
        let w = (t - times[lo]) / (times[hi] - times[lo]);
        if w <= 0.0 {
            return self.states[lo].clone();
        }
        &self.states[lo] * (1.0 - w) + &self.states[hi] * w
    }
}

fn finite(x: &Array2<f64>) -> bool {
    x.iter().all(|v| v.is_finite())
}

/// One classical fourth-order Runge–Kutta step.
pub fn rk4_step<F>(f: &mut F, x: ArrayView2<f64>, t: f64, h: f64) -> Result<Array2<f64>>
where
    F: FnMut(f64, ArrayView2<f64>) -> Result<Array2<f64>>,
{
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("step must be positive, got {h}")));
    }
    let half = 0.5 * h;
    let check = |k: Array2<f64>| if finite(&k) { Ok(k) } else { Err(Error::Integration { t }) };
    let k1 = check(f(t, x)?)?;
    let k2 = check(f(t + half, (&x + &(&k1 * half)).view())?)?;
    let k3 = check(f(t + half, (&x + &(&k2 * half)).view())?)?;
    let k4 = check(f(t + h, (&x + &(&k3 * h)).view())?)?;
    let mut next = x.to_owned();
    let sixth = h / 6.0;
    ndarray::Zip::from(&mut next)
        .and(&k1)
        .and(&k2)
        .and(&k3)
        .and(&k4)
        .for_each(|y, &a, &b, &c, &d| *y += sixth * (a + 2.0 * b + 2.0 * c + d));
    if finite(&next) {
        Ok(next)
    } else {
        Err(Error::Integration { t })
    }
}

/// Number of `h` steps covering `[t0, t1]`; rejects partial final steps.
pub fn step_count(t0: f64, t1: f64, h: f64) -> Result<usize> {
    if !(t1 > t0) || !(h > 0.0) || !h.is_finite() {
        return Err(Error::Config(format!(
            "need t1 > t0 and h > 0, got [{t0}, {t1}] with h = {h}"
        )));
    }
    let raw = (t1 - t0) / h;
    let n = raw.round();
    // a handful of ulps absorbs the rounding of (t1 - t0) and the division
    if (raw - n).abs() > 4.0 * f64::EPSILON * n.max(1.0) || n < 1.0 {
        return Err(Error::Config(format!(
            "interval length {} is not an integral multiple of step {h}",
            t1 - t0
        )));
    }
    Ok(n as usize)
}

/// Fixed-step integration over `[t0, t1]`, keeping every grid point.
pub fn integrate<F>(mut f: F, x0: ArrayView2<f64>, t0: f64, t1: f64, h: f64) -> Result<Trajectory>
where
    F: FnMut(f64, ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let steps = step_count(t0, t1, h)?;
    integrate_steps(&mut f, x0, t0, h, steps)
}

pub fn integrate_steps<F>(
    f: &mut F,
    x0: ArrayView2<f64>,
    t0: f64,
    h: f64,
    steps: usize,
) -> Result<Trajectory>
where
    F: FnMut(f64, ArrayView2<f64>) -> Result<Array2<f64>>,
{
    let mut times = Vec::with_capacity(steps + 1);
    let mut states = Vec::with_capacity(steps + 1);
    times.push(t0);
    states.push(x0.to_owned());
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let next = rk4_step(f, states[k].view(), t, h)?;
        times.push(t0 + (k + 1) as f64 * h);
        states.push(next);
    }
    Ok(Trajectory::from_parts_unchecked(times, states))
}

/// How many singular triplets to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RankRule {
    /// Every numerically nonzero singular value.
    All,
    /// `sigma_i >= tau`.
    Absolute(f64),
    /// `sigma_i / sigma_1 >= tau`.
    Relative(f64),
    /// Leading `r` (fewer if the numerical rank is smaller).
    Fixed(usize),
}

impl RankRule {
    fn select(&self, sigma: &[f64]) -> usize {
        match *self {
            RankRule::All => sigma.len(),
            RankRule::Absolute(tau) => sigma.iter().take_while(|&&s| s >= tau).count(),
            RankRule::Relative(tau) => {
                let top = sigma.first().copied().unwrap_or(0.0);
                sigma.iter().take_while(|&&s| s / top >= tau).count()
            }
            RankRule::Fixed(r) => r.min(sigma.len()),
        }
    }
}

/// Thin SVD factors `M ~ left * diag(singular_values) * right^T`.
#[derive(Debug, Clone)]
pub struct SvdResult {
    pub left: Array2<f64>,
    pub singular_values: Vec<f64>,
    pub right: Option<Array2<f64>>,
    /// Every numerically nonzero singular value, including discarded ones.
    pub spectrum: Vec<f64>,
}

impl SvdResult {
    pub fn rank(&self) -> usize {
        self.singular_values.len()
    }
}

/// Truncated SVD with right singular vectors.
pub fn truncated_svd(m: ArrayView2<f64>, keep: RankRule) -> Result<SvdResult> {
    svd_impl(m, keep, true)
}

/// Truncated SVD returning only the left factor.
pub fn left_singular(m: ArrayView2<f64>, keep: RankRule) -> Result<SvdResult> {
    svd_impl(m, keep, false)
}

fn svd_impl(m: ArrayView2<f64>, keep: RankRule, with_right: bool) -> Result<SvdResult> {
    let (rows, cols) = m.dim();
    if rows == 0 || cols == 0 {
        return Err(Error::Config(format!("SVD of an empty {rows}x{cols} matrix")));
    }
    if !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Domain("SVD input has non-finite entries".into()));
    }
    let empty = || SvdResult {
        left: Array2::zeros((rows, 0)),
        singular_values: Vec::new(),
        right: with_right.then(|| Array2::zeros((cols, 0))),
        spectrum: Vec::new(),
    };
    if m.iter().all(|v| *v == 0.0) {
        return Ok(empty());
    }

    let dm = DMatrix::from_fn(rows, cols, |i, j| m[[i, j]]);
    let svd = dm.svd(true, with_right);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t;

    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma_max = svd.singular_values[order[0]];
    let cutoff = sigma_max * f64::EPSILON * rows.max(cols) as f64;
    let nonzero: Vec<usize> = order
        .into_iter()
        .filter(|&i| svd.singular_values[i] > cutoff)
        .collect();
    let spectrum: Vec<f64> = nonzero.iter().map(|&i| svd.singular_values[i]).collect();
    let r = keep.select(&spectrum);
    if r == 0 {
        let mut out = empty();
        out.spectrum = spectrum;
        return Ok(out);
    }

    let mut left = Array2::zeros((rows, r));
    let mut right = with_right.then(|| Array2::zeros((cols, r)));
    for (c, &idx) in nonzero[..r].iter().enumerate() {
        let col = u.column(idx);
        // first entry that is not rounding noise decides the sign
        let sign = col
            .iter()
            .find(|v| v.abs() > 1e-12)
            .map_or(1.0, |v| v.signum());
        for i in 0..rows {
            left[[i, c]] = sign * col[i];
        }
        if let (Some(right), Some(vt)) = (right.as_mut(), v_t.as_ref()) {
            for j in 0..cols {
                right[[j, c]] = sign * vt[(idx, j)];
            }
        }
    }
    Ok(SvdResult {
        left,
        singular_values: spectrum[..r].to_vec(),
        right,
        spectrum,
    })
}

/// Central-difference gradient of a scalar function of a matrix.
pub fn finite_difference_gradient<G>(mut g: G, x: ArrayView2<f64>, step: f64) -> Array2<f64>
where
    G: FnMut(ArrayView2<f64>) -> f64,
{
    let mut probe = x.to_owned();
    let mut grad = Array2::zeros(x.dim());
    for idx in ndarray::indices(x.dim()) {
        let orig = probe[idx];
        probe[idx] = orig + step;
        let up = g(probe.view());
        probe[idx] = orig - step;
        let down = g(probe.view());
        probe[idx] = orig;
        grad[idx] = (up - down) / (2.0 * step);
    }
    grad
}

pub fn frobenius_norm(m: ArrayView2<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn max_abs(m: ArrayView2<f64>) -> f64 {
    m.iter().fold(0.0f64, |acc, v| acc.max(v.abs()))
}


#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    fn decay(_t: f64, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(x.mapv(|v| -v))
    }

    #[test]
    fn zero_rhs_keeps_state() {
        let x = array![[1.0, 2.0], [3.0, -4.0]];
        let mut f = |_t: f64, x: ArrayView2<f64>| Ok(Array2::zeros(x.dim()));
        let y = rk4_step(&mut f, x.view(), 0.0, 0.3).unwrap();
        assert_eq!(x, y);
        let traj = integrate(f, x.view(), 0.0, 1.0, 0.25).unwrap();
        assert_eq!(traj.len(), 5);
        assert!(traj.states().iter().all(|s| *s == x));
    }

    #[test]
    fn exponential_decay_single_step() {
        let x = array![[1.0]];
        let y = rk4_step(&mut decay, x.view(), 0.0, 0.1).unwrap();
        assert!((y[[0, 0]] - 0.9048375).abs() < 1e-7);
        assert!((y[[0, 0]] - (-0.1f64).exp()).abs() < 1e-7);
    }

    #[test]
    fn linear_step_is_taylor_polynomial() {
        // x' = A x; one RK4 step equals (I + hA + (hA)^2/2 + (hA)^3/6 + (hA)^4/24) x0
        let a = array![[0.3, -1.2], [0.8, -0.5]];
        let x0 = array![[1.0], [-2.0]];
        let h = 0.2;
        let mut f = |_t: f64, x: ArrayView2<f64>| Ok(a.dot(&x));
        let y = rk4_step(&mut f, x0.view(), 0.0, h).unwrap();
        let ha = &a * h;
        let mut term = Array2::<f64>::eye(2);
        let mut poly = Array2::<f64>::eye(2);
        for k in 1..=4 {
            term = term.dot(&ha) / k as f64;
            poly += &term;
        }
        let expected = poly.dot(&x0);
        for (p, q) in y.iter().zip(expected.iter()) {
            assert_relative_eq!(p, q, epsilon = 1e-14);
        }
    }

    #[test]
    fn fourth_order_convergence() {
        let x = array![[1.0]];
        let err = |h: f64| {
            let y = rk4_step(&mut decay, x.view(), 0.0, h).unwrap();
            (y[[0, 0]] - (-h).exp()).abs()
        };
        let ratio = err(0.2) / err(0.1);
        assert!((28.0..=36.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn rejects_partial_steps() {
        assert!(step_count(0.0, 1.0, 0.3).is_err());
        assert_eq!(step_count(0.0, 1.0, 0.05).unwrap(), 20);
        assert_eq!(step_count(0.0, 20.0, 0.05).unwrap(), 400);
        assert!(step_count(1.0, 1.0, 0.1).is_err());
    }

    #[test]
    fn non_finite_stage_reports_time() {
        let mut f = |_t: f64, x: ArrayView2<f64>| Ok(x.mapv(|_| f64::NAN));
        match rk4_step(&mut f, array![[1.0]].view(), 2.5, 0.1) {
            Err(Error::Integration { t }) => assert_eq!(t, 2.5),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn time_reversal_returns_to_start() {
        let a = array![[-0.4, 1.0], [-1.0, -0.1]];
        let x0 = array![[0.5, -1.5], [2.0, 0.25]];
        let fwd = integrate(|_t, x: ArrayView2<f64>| Ok(x.dot(&a.t())), x0.view(), 0.0, 1.0, 0.01)
            .unwrap();
        let back = integrate(
            |_t, x: ArrayView2<f64>| Ok(-x.dot(&a.t())),
            fwd.last().view(),
            0.0,
            1.0,
            0.01,
        )
        .unwrap();
        for (p, q) in back.last().iter().zip(x0.iter()) {
            assert!((p - q).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolation_is_linear() {
        let traj = Trajectory::new(
            vec![0.0, 1.0, 2.0],
            vec![array![[0.0]], array![[2.0]], array![[6.0]]],
        )
        .unwrap();
        assert_eq!(traj.interpolate(0.5), array![[1.0]]);
        assert_eq!(traj.interpolate(1.5), array![[4.0]]);
        assert_eq!(traj.interpolate(2.0), array![[6.0]]);
        assert_eq!(traj.interpolate(-1.0), array![[0.0]]);
        assert!(Trajectory::new(vec![0.0, 0.0], vec![array![[0.0]], array![[1.0]]]).is_err());
    }

    #[test]
    fn rank_one_svd() {
        let m = array![[1.0, 2.0], [2.0, 4.0]];
        let s = truncated_svd(m.view(), RankRule::All).unwrap();
        assert_eq!(s.rank(), 1);
        assert_relative_eq!(s.singular_values[0], 5.0, epsilon = 1e-12);
        let r5 = 5f64.sqrt();
        assert_relative_eq!(s.left[[0, 0]], 1.0 / r5, epsilon = 1e-12);
        assert_relative_eq!(s.left[[1, 0]], 2.0 / r5, epsilon = 1e-12);
    }

    #[test]
    fn diagonal_svd_sorts_magnitudes() {
        let m = array![[1.0, 0.0, 0.0], [0.0, -3.0, 0.0], [0.0, 0.0, 2.0]];
        let s = truncated_svd(m.view(), RankRule::All).unwrap();
        for (a, b) in s.singular_values.iter().zip([3.0, 2.0, 1.0]) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        // sign convention: first nonzero entry of each left vector positive
        for c in 0..3 {
            let first = s.left.column(c).iter().copied().find(|v| v.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn zero_matrix_gives_empty_result() {
        let s = truncated_svd(Array2::zeros((3, 4)).view(), RankRule::All).unwrap();
        assert_eq!(s.rank(), 0);
        assert!(truncated_svd(array![[f64::NAN]].view(), RankRule::All).is_err());
    }

    #[test]
    fn rank_rules() {
        let m = array![[10.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 0.001]];
        let r = |rule| truncated_svd(m.view(), rule).unwrap().rank();
        assert_eq!(r(RankRule::Absolute(0.5)), 2);
        assert_eq!(r(RankRule::Relative(1e-3)), 2);
        assert_eq!(r(RankRule::Relative(1e-4)), 3);
        assert_eq!(r(RankRule::Fixed(1)), 1);
        assert_eq!(r(RankRule::Fixed(7)), 3);
    }

    #[test]
    fn fd_gradient_of_quadratic() {
        let x = array![[1.0, -2.0], [0.5, 3.0]];
        let g = finite_difference_gradient(|y| y.iter().map(|v| v * v).sum(), x.view(), 1e-4);
        for (p, q) in g.iter().zip(x.iter()) {
            assert_relative_eq!(*p, 2.0 * q, epsilon = 1e-8);
        }
        let c = finite_difference_gradient(|_| 4.2, x.view(), 1e-3);
        assert!(c.iter().all(|v| *v == 0.0));
    }
}
