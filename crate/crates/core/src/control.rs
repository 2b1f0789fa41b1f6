//! Pontryagin first-order conditions for the consensus control problem,
//! a relaxed forward-backward sweep for the local problem, and the
//! receding-horizon driver.
//!
//! The running cost is `(1/n) sum_l (|x_l - mean|^2 + gamma |u_l|^2)` with
//! `n` the number of controlled entities (agents, or cluster centers) and
//! `mean` their arithmetic mean. The dynamics are those of an
//! [`Interaction`], so the same machinery serves the full model and every
//! reduced one.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::model::{consensus_parameter, mean_state, AgentEnsemble, InfluenceKernel, Interaction, PairGeometry};
use crate::numerics::{max_abs, rk4_step, Trajectory};
use crate::report::{RunReport, Sample};

/// Pairs closer than this skip the `phi'(s)/s` term of the adjoint.
pub const COINCIDENCE_TOL: f64 = 1e-12;

/// Consecutive iterations in which both the optimality residual and the
/// horizon cost grow, after which the sweep is declared divergent.
const DIVERGENCE_RUN: usize = 5;

/// Floor for the adaptive relaxation weight.
const MIN_RELAXATION: f64 = 1.0 / 64.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcpConfig {
    /// Control penalization.
    pub gamma: f64,
    /// Local horizon length in integrator steps.
    pub horizon_steps: usize,
    pub sweep_max_iters: usize,
    pub sweep_tol: f64,
    /// Initial relaxation weight of the candidate control in each sweep
    /// update; halved whenever the optimality residual grows.
    pub relaxation: f64,
    /// Start each receding-horizon solve from the previous solution shifted
    /// by one step instead of from zero.
    pub warm_start: bool,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            horizon_steps: 10,
            sweep_max_iters: 100,
            sweep_tol: 1e-8,
            relaxation: 0.5,
            warm_start: true,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Config(format!("ocp: {what}")));
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return bad("gamma must be positive");
        }
        if self.horizon_steps == 0 {
            return bad("horizon_steps must be positive");
        }
        if self.sweep_max_iters == 0 {
            return bad("sweep_max_iters must be positive");
        }
        if !(self.sweep_tol > 0.0) {
            return bad("sweep_tol must be positive");
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return bad("relaxation must lie in (0, 1]");
        }
        Ok(())
    }
}

/// Result of one local optimal control solve on the grid
/// `t_0, t_0 + h_t, ..., t_0 + horizon_steps h_t`.
#[derive(Debug, Clone)]
pub struct OcpSolution {
    pub controls: Vec<Array2<f64>>,
    pub states: Trajectory,
    pub costates: Vec<Array2<f64>>,
    pub converged: bool,
    /// `max_k |U_k + (n / 2 gamma) P_k|_max` of the returned triple.
    pub optimality_residual: f64,
    pub cost: f64,
    pub iterations: usize,
}

/// Kernel tables of one state, shared by every costate evaluation at it.
struct AdjointFrame {
    centered: Array2<f64>,
    phi: Array2<f64>,
    slope_over_s: Array2<f64>,
    /// `sum_m w_m phi_lm`
    kernel_weight: Vec<f64>,
}

/// An interacting system together with the control penalization.
#[derive(Debug, Clone, Copy)]
pub struct ControlProblem<'a> {
    pub interaction: Interaction<'a>,
    pub gamma: f64,
}

impl<'a> ControlProblem<'a> {
    pub fn new(interaction: Interaction<'a>, gamma: f64) -> Self {
        Self { interaction, gamma }
    }

    /// Full agent model with unit weights.
    pub fn agents(kernel: InfluenceKernel, agents: usize, gamma: f64) -> Self {
        Self::new(Interaction::uniform(kernel, agents), gamma)
    }

    pub fn dynamics(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> Array2<f64> {
        let mut f = self.interaction.drift(x);
        f += &u;
        f
    }

    pub fn running_cost(&self, x: ArrayView2<f64>, u: ArrayView2<f64>) -> f64 {
        let n = x.nrows() as f64;
        let mean = mean_state(x);
        let spread: f64 = x
            .rows()
            .into_iter()
            .map(|r| r.iter().zip(mean.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
            .sum();
        let effort: f64 = u.iter().map(|v| v * v).sum();
        (spread + self.gamma * effort) / n
    }

    pub fn hamiltonian(&self, x: ArrayView2<f64>, u: ArrayView2<f64>, p: ArrayView2<f64>) -> f64 {
        let f = self.dynamics(x, u);
        self.running_cost(x, u) + Zip::from(&p).and(&f).fold(0.0, |acc, a, b| acc + a * b)
    }

    /// `grad_x H(x, u, p)`; independent of `u`.
    pub fn hamiltonian_gradient(&self, x: ArrayView2<f64>, p: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_shape(x.dim(), p.dim())?;
        self.gradient_at(&self.frame(x), p)
    }

    fn frame(&self, x: ArrayView2<f64>) -> AdjointFrame {
        let n = x.nrows();
        let inter = &self.interaction;
        let geo = PairGeometry::new(x);
        let mut phi = Array2::<f64>::zeros((n, n));
        let mut slope_over_s = Array2::<f64>::zeros((n, n));
        let mut kernel_weight = vec![0.0; n];
        for l in 0..n {
            let wl = inter.weight(l);
            for m in (l + 1)..n {
                let wm = inter.weight(m);
                let s = geo.distance[[l, m]];
                let (value, slope) = inter.kernel.value_and_derivative(s);
                phi[[l, m]] = value;
                phi[[m, l]] = value;
                kernel_weight[l] += value * wm;
                kernel_weight[m] += value * wl;
                if s >= COINCIDENCE_TOL {
                    slope_over_s[[l, m]] = slope / s;
                    slope_over_s[[m, l]] = slope / s;
                }
            }
        }
        AdjointFrame {
            centered: geo.centered,
            phi,
            slope_over_s,
            kernel_weight,
        }
    }

    fn gradient_at(&self, frame: &AdjointFrame, p: ArrayView2<f64>) -> Result<Array2<f64>> {
        let n = p.nrows();
        let inter = &self.interaction;
        let xc = &frame.centered;
        // inner[a, b] = <p_a, xc_b>
        let inner = p.dot(&xc.t());

        // With q = w_l p_m - w_m p_l and delta = x_m - x_l, the pair term is
        // (phi'/s) <q, delta> delta + phi q. The radial coefficients are
        // symmetric in (l, m).
        let mut radial = Array2::<f64>::zeros((n, n));
        for l in 0..n {
            let wl = inter.weight(l);
            for m in (l + 1)..n {
                let wm = inter.weight(m);
                let dot = wl * (inner[[m, m]] - inner[[m, l]]) - wm * (inner[[l, m]] - inner[[l, l]]);
                let c = frame.slope_over_s[[l, m]] * dot;
                radial[[l, m]] = c;
                radial[[m, l]] = c;
            }
        }
        let radial_sum = radial.dot(xc);
        let kernel_sum = frame.phi.dot(&p);

        let spread_scale = 2.0 / n as f64;
        let coupling_scale = 1.0 / inter.normalization;
        let mut grad = Array2::zeros(p.dim());
        for (l, mut row) in grad.rows_mut().into_iter().enumerate() {
            let radial_total = radial.row(l).sum();
            let wl = inter.weight(l);
            let kw = frame.kernel_weight[l];
            Zip::from(&mut row)
                .and(xc.row(l))
                .and(p.row(l))
                .and(radial_sum.row(l))
                .and(kernel_sum.row(l))
                .for_each(|g, &c, &pk, &rs, &ks| {
                    let coupling = rs - radial_total * c + wl * ks - kw * pk;
                    *g = spread_scale * c + coupling_scale * coupling;
                });
            if !row.iter().all(|v| v.is_finite()) {
                return Err(Error::Numeric { agent: l });
            }
        }
        Ok(grad)
    }

    /// Costate right-hand side `dp/dt = -grad_x H`.
    pub fn adjoint_rhs(&self, x: ArrayView2<f64>, p: ArrayView2<f64>) -> Result<Array2<f64>> {
        Ok(-self.hamiltonian_gradient(x, p)?)
    }

    /// Minimizer of `H` in `u`: `u_l = -(n / (2 gamma)) p_l`.
    pub fn control_from_costate(&self, p: ArrayView2<f64>) -> Array2<f64> {
        let scale = -(p.nrows() as f64) / (2.0 * self.gamma);
        p.mapv(|v| scale * v)
    }

    /// Relaxed forward-backward sweep on `[0, horizon_steps h_t]` from `x0`.
    pub fn sweep(
        &self,
        x0: ArrayView2<f64>,
        cfg: &OcpConfig,
        h_t: f64,
        initial: Option<&[Array2<f64>]>,
    ) -> Result<OcpSolution> {
        cfg.validate()?;
        self.interaction.check_entities(x0.nrows())?;
        let steps = cfg.horizon_steps;
        let shape = x0.dim();
        let mut controls: Vec<Array2<f64>> = match initial {
            Some(u) if u.len() == steps + 1 && u.iter().all(|c| c.dim() == shape) => u.to_vec(),
            _ => vec![Array2::zeros(shape); steps + 1],
        };

        let mut prev_residual = f64::INFINITY;
        let mut prev_cost = f64::INFINITY;
        let mut rising = 0;
        let mut relaxation = cfg.relaxation;
        let mut iterations = 0;
        loop {
            iterations += 1;
            let states = self.forward(x0, &controls, h_t)?;
            let costates = self.backward(&states, h_t)?;
            let candidates: Vec<Array2<f64>> =
                costates.iter().map(|p| self.control_from_costate(p.view())).collect();
            let residual = controls
                .iter()
                .zip(&candidates)
                .map(|(u, c)| max_abs((u - c).view()))
                .fold(0.0, f64::max);
            let cost = self.trajectory_cost(&states, &controls, h_t);

            let converged = residual <= cfg.sweep_tol;
            if !residual.is_finite() {
                return Err(Error::SweepDiverged { iterations, residual });
            }
            if converged || iterations >= cfg.sweep_max_iters {
                return Ok(OcpSolution {
                    controls,
                    states,
                    costates,
                    converged,
                    optimality_residual: residual,
                    cost,
                    iterations,
                });
            }

            if residual > prev_residual {
                relaxation = (relaxation * 0.5).max(MIN_RELAXATION);
            }
            if residual > prev_residual && cost > prev_cost {
                rising += 1;
                if rising >= DIVERGENCE_RUN {
                    return Err(Error::SweepDiverged { iterations, residual });
                }
            } else {
                rising = 0;
            }
            prev_residual = residual;
            prev_cost = cost;

            let w = relaxation;
            for (u, c) in controls.iter_mut().zip(&candidates) {
                Zip::from(u).and(c).for_each(|a, &b| *a = (1.0 - w) * *a + w * b);
            }
        }
    }

    fn forward(&self, x0: ArrayView2<f64>, controls: &[Array2<f64>], h: f64) -> Result<Trajectory> {
        let steps = controls.len() - 1;
        let mut times = Vec::with_capacity(steps + 1);
        let mut states = Vec::with_capacity(steps + 1);
        times.push(0.0);
        states.push(x0.to_owned());
        for k in 0..steps {
            let t_k = k as f64 * h;
            let (u0, u1) = (&controls[k], &controls[k + 1]);
            let mut f = |t: f64, x: ArrayView2<f64>| {
                let w = ((t - t_k) / h).clamp(0.0, 1.0);
                let mut dx = self.interaction.drift(x);
                Zip::from(&mut dx)
                    .and(u0)
                    .and(u1)
                    .for_each(|y, &a, &b| *y += (1.0 - w) * a + w * b);
                Ok(dx)
            };
            let next = rk4_step(&mut f, states[k].view(), t_k, h)?;
            times.push((k + 1) as f64 * h);
            states.push(next);
        }
        Ok(Trajectory::from_parts_unchecked(times, states))
    }

    /// Integrates the costate backward from `p(T) = 0` over the stored
    /// forward trajectory, in reversed time `tau = T - t`. RK4 stages only
    /// touch grid points and step midpoints, so their kernel tables are
    /// built once per point.
    fn backward(&self, states: &Trajectory, h: f64) -> Result<Vec<Array2<f64>>> {
        let steps = states.len() - 1;
        let grid = states.states();
        let mut costates = vec![Array2::zeros(states.first().dim()); steps + 1];
        let mut upper = self.frame(grid[steps].view());
        for j in 0..steps {
            let k = steps - j;
            let tau = j as f64 * h;
            let midpoint = (&grid[k] + &grid[k - 1]) * 0.5;
            let middle = self.frame(midpoint.view());
            let lower = self.frame(grid[k - 1].view());
            let mut g = |stage_tau: f64, q: ArrayView2<f64>| {
                let offset = stage_tau - tau;
                let frame = if offset < 0.25 * h {
                    &upper
                } else if offset < 0.75 * h {
                    &middle
                } else {
                    &lower
                };
                self.gradient_at(frame, q)
            };
            costates[k - 1] = rk4_step(&mut g, costates[k].view(), tau, h)?;
            upper = lower;
        }
        Ok(costates)
    }

    /// Trapezoidal integral of the running cost over the local grid.
    fn trajectory_cost(&self, states: &Trajectory, controls: &[Array2<f64>], h: f64) -> f64 {
        let values: Vec<f64> = states
            .states()
            .iter()
            .zip(controls)
            .map(|(x, u)| self.running_cost(x.view(), u.view()))
            .collect();
        let inner: f64 = values[1..values.len() - 1].iter().sum();
        h * (0.5 * (values[0] + values[values.len() - 1]) + inner)
    }
}

/// `(1/N) sum_i (|x_i - mean|^2 + gamma |u_i|^2)`.
pub fn running_cost(x: ArrayView2<f64>, u: ArrayView2<f64>, gamma: f64) -> Result<f64> {
    check_shape(x.dim(), u.dim())?;
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    Ok(ControlProblem::agents(InfluenceKernel::Constant { c: 1.0 }, x.nrows(), gamma)
        .running_cost(x, u))
}

pub fn hamiltonian(
    x: ArrayView2<f64>,
    u: ArrayView2<f64>,
    p: ArrayView2<f64>,
    kernel: &InfluenceKernel,
    gamma: f64,
) -> Result<f64> {
    check_shape(x.dim(), u.dim())?;
    check_shape(x.dim(), p.dim())?;
    Ok(ControlProblem::agents(*kernel, x.nrows(), gamma).hamiltonian(x, u, p))
}

pub fn adjoint_rhs(
    x: ArrayView2<f64>,
    p: ArrayView2<f64>,
    kernel: &InfluenceKernel,
) -> Result<Array2<f64>> {
    // gamma does not enter grad_x H
    ControlProblem::agents(*kernel, x.nrows(), 1.0).adjoint_rhs(x, p)
}

/// `u_i = -(n / (2 gamma)) p_i`.
pub fn control_from_costate(p: ArrayView2<f64>, gamma: f64, n: usize) -> Result<Array2<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::Domain(format!("gamma must be positive, got {gamma}")));
    }
    let scale = -(n as f64) / (2.0 * gamma);
    Ok(p.mapv(|v| scale * v))
}

pub fn forward_backward_sweep(
    x0: ArrayView2<f64>,
    kernel: &InfluenceKernel,
    cfg: &OcpConfig,
    h_t: f64,
) -> Result<OcpSolution> {
    ControlProblem::agents(*kernel, x0.nrows(), cfg.gamma).sweep(x0, cfg, h_t, None)
}

/// Shifts a local solution one step forward in time for warm starting.
pub(crate) fn shifted_controls(controls: &[Array2<f64>]) -> Vec<Array2<f64>> {
    let mut out: Vec<Array2<f64>> = controls[1..].to_vec();
    out.push(controls.last().expect("non-empty").clone());
    out
}

/// Fixed-horizon iterative control of the full agent model: solve the
/// local problem, apply its first control for one step, repeat until
/// the consensus parameter falls below `consensus_tol`.
pub fn receding_horizon(
    x0: &AgentEnsemble,
    kernel: &InfluenceKernel,
    cfg: &OcpConfig,
    h_t: f64,
    consensus_tol: f64,
    max_steps: usize,
) -> Result<RunReport> {
    if !(consensus_tol > 0.0) {
        return Err(Error::Config("consensus_tol must be positive".into()));
    }
    if !(h_t > 0.0 && h_t.is_finite()) {
        return Err(Error::Config("h_t must be positive".into()));
    }
    cfg.validate()?;
    kernel.validate()?;
    let started = Instant::now();
    let problem = ControlProblem::agents(*kernel, x0.agents(), cfg.gamma);
    let mut report = RunReport::default();
    let mut x = x0.states().to_owned();
    let mut t = x0.time();
    let mut warm: Option<Vec<Array2<f64>>> = None;

    for step in 0.. {
        let consensus = consensus_parameter(x.view());
        if consensus < consensus_tol || step == max_steps {
            report.consensus_reached = consensus < consensus_tol;
            let zero = Array2::zeros(x.dim());
            report.push(
                Sample {
                    time: t,
                    consensus,
                    running_cost: problem.running_cost(x.view(), zero.view()),
                    ..Default::default()
                },
                h_t,
            );
            break;
        }
        report.control_start.get_or_insert(t);

        let clock = Instant::now();
        let solution = problem
            .sweep(x.view(), cfg, h_t, warm.as_deref())
            .map_err(|e| e.at_step(step))?;
        let ocp_ms = ms(clock);
        let u = solution.controls[0].clone();
        if cfg.warm_start {
            warm = Some(shifted_controls(&solution.controls));
        }

        let clock = Instant::now();
        let mut f = |_t: f64, y: ArrayView2<f64>| Ok(problem.dynamics(y, u.view()));
        let next = rk4_step(&mut f, x.view(), t, h_t).map_err(|e| e.at_step(step))?;
        let advance_ms = ms(clock);
        report.phases.ocp_ms += ocp_ms;
        report.phases.advance_ms += advance_ms;

        report.push(
            Sample {
                time: t,
                consensus,
                running_cost: problem.running_cost(x.view(), u.view()),
                wall_ms: ocp_ms + advance_ms,
                sweep_iterations: Some(solution.iterations),
                ..Default::default()
            },
            h_t,
        );
        x = next;
        t = x0.time() + (step + 1) as f64 * h_t;
    }
    report.total_wall_ms = ms(started);
    report.final_state = Some(x);
    Ok(report)
}

pub(crate) fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}
