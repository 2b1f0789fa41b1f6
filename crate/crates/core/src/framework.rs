//! Two-level adaptive control: cluster the agents, compress the center
//! system with a windowed POD basis, solve the small control problem and
//! apply the lifted control to the full ensemble for one step.

use std::collections::VecDeque;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::clustering::{cluster_centers, dbscan, epsilon_heuristic, ClusterPartition};
use crate::control::{ms, shifted_controls, ControlProblem, OcpConfig};
use crate::error::{Error, Phase, Result};
use crate::model::{consensus_parameter, rhs_uncontrolled, AgentEnsemble, InfluenceKernel};
use crate::numerics::{integrate_steps, rk4_step, RankRule, Trajectory};
use crate::reduction::{pod_basis, pod_basis_with, ReducedBasis, SnapshotMatrix, ThresholdMode};
use crate::report::{Fallback, PhaseTimings, RunReport, Sample};

/// How the state dimension is reduced before the control solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Reduction {
    /// Windowed POD with a singular-value threshold.
    Pod { tau: f64, mode: ThresholdMode },
    /// Windowed POD keeping the leading `r` modes.
    FixedRank { r: usize },
    /// No reduction, `r = d`.
    Identity,
}

impl Default for Reduction {
    fn default() -> Self {
        Reduction::Pod {
            tau: 1e-3,
            mode: ThresholdMode::Relative,
        }
    }
}

impl Reduction {
    pub fn uses_snapshots(&self) -> bool {
        !matches!(self, Reduction::Identity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EpsMode {
    /// `|X|_F / N` of the current state, recomputed every step.
    Auto,
    /// `|X|_F / N` of the state at the first controlled step.
    Frozen,
    Value(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DbscanSettings {
    /// When off, every agent is its own cluster.
    pub enabled: bool,
    pub eps: EpsMode,
    pub min_pts: usize,
}

impl Default for DbscanSettings {
    fn default() -> Self {
        Self {
            enabled: true,
            eps: EpsMode::Auto,
            min_pts: 1,
        }
    }
}

/// Which states fill the snapshot window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotSource {
    #[default]
    Agents,
    /// Centers of the current partition, evaluated on every window sample.
    Centers,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrameworkConfig {
    /// Uncontrolled steps before the first control; the snapshot window
    /// holds `warmup_steps + 1` samples.
    pub warmup_steps: usize,
    pub h_t: f64,
    pub consensus_tol: f64,
    pub ocp: OcpConfig,
    pub reduction: Reduction,
    pub dbscan: DbscanSettings,
    pub snapshot_source: SnapshotSource,
    pub max_outer_steps: usize,
}

impl Default for FrameworkConfig {
    fn default() -> Self {
        Self {
            warmup_steps: 10,
            h_t: 0.05,
            consensus_tol: 1e-6,
            ocp: OcpConfig::default(),
            reduction: Reduction::default(),
            dbscan: DbscanSettings::default(),
            snapshot_source: SnapshotSource::Agents,
            max_outer_steps: 5000,
        }
    }
}

impl FrameworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: String| Err(Error::Config(what));
        if !(self.h_t > 0.0 && self.h_t.is_finite()) {
            return bad(format!("h_t must be positive, got {}", self.h_t));
        }
        if !(self.consensus_tol > 0.0) {
            return bad(format!("consensus_tol must be positive, got {}", self.consensus_tol));
        }
        if self.reduction.uses_snapshots() && self.warmup_steps == 0 {
            return bad("POD needs warmup_steps >= 1".into());
        }
        match self.reduction {
            Reduction::Pod { tau, .. } if !(tau > 0.0 && tau.is_finite()) => {
                return bad(format!("pod tau must be positive, got {tau}"));
            }
            Reduction::FixedRank { r: 0 } => return bad("fixed rank must be at least 1".into()),
            _ => {}
        }
        if self.dbscan.min_pts == 0 {
            return bad("dbscan min_pts must be at least 1".into());
        }
        if let EpsMode::Value(eps) = self.dbscan.eps {
            if !(eps >= 0.0 && eps.is_finite()) {
                return bad(format!("dbscan eps must be finite and >= 0, got {eps}"));
            }
        }
        if self.max_outer_steps == 0 {
            return bad("max_outer_steps must be positive".into());
        }
        self.ocp.validate()
    }
}

/// Uncontrolled integration over `warmup_steps` steps of `h_t`.
pub fn warmup(x0: &AgentEnsemble, kernel: &InfluenceKernel, cfg: &FrameworkConfig) -> Result<Trajectory> {
    let mut f = |_t: f64, x: ArrayView2<f64>| Ok(rhs_uncontrolled(x, kernel));
    integrate_steps(&mut f, x0.states(), x0.time(), cfg.h_t, cfg.warmup_steps)
}

/// Copies each cluster's control row to all of its members.
pub fn broadcast_controls(u_hat: ArrayView2<f64>, partition: &ClusterPartition) -> Result<Array2<f64>> {
    let k = u_hat.nrows();
    let mut out = Array2::zeros((partition.agents(), u_hat.ncols()));
    for (i, &label) in partition.labels().iter().enumerate() {
        if label >= k {
            return Err(Error::LabelOutOfRange { label, clusters: k });
        }
        out.row_mut(i).assign(&u_hat.row(label));
    }
    Ok(out)
}

/// Everything an outer step carries over to the next one.
#[derive(Debug, Clone)]
pub struct TwoLevelState {
    pub x: Array2<f64>,
    pub time: f64,
    /// The last `warmup_steps + 1` full states, oldest first.
    pub window: VecDeque<Array2<f64>>,
    pub window_times: VecDeque<f64>,
    basis: Option<ReducedBasis>,
    /// Previous horizon controls per cluster, in full coordinates.
    warm: Option<Vec<Array2<f64>>>,
    frozen_eps: Option<f64>,
}

impl TwoLevelState {
    /// Starts from the end of a warmup trajectory.
    pub fn from_warmup(traj: &Trajectory) -> Self {
        Self {
            x: traj.last().clone(),
            time: *traj.times().last().expect("non-empty"),
            window: traj.states().iter().cloned().collect(),
            window_times: traj.times().iter().copied().collect(),
            basis: None,
            warm: None,
            frozen_eps: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub clusters: usize,
    pub rank: Option<usize>,
    /// Lifted per-agent control applied on this step.
    pub control: Array2<f64>,
    pub sweep_iterations: Option<usize>,
    pub ocp_cost: Option<f64>,
    pub phases: PhaseTimings,
    /// Why zero control was applied, if it was.
    pub fallback: Option<String>,
}

struct Design {
    control: Array2<f64>,
    iterations: usize,
    cost: f64,
}

fn partition_for(x: ArrayView2<f64>, state: &mut TwoLevelState, cfg: &FrameworkConfig) -> Result<ClusterPartition> {
    if !cfg.dbscan.enabled {
        return Ok(ClusterPartition::singletons(x.nrows()));
    }
    let eps = match cfg.dbscan.eps {
        EpsMode::Auto => epsilon_heuristic(x),
        EpsMode::Frozen => *state.frozen_eps.get_or_insert_with(|| epsilon_heuristic(x)),
        EpsMode::Value(eps) => eps,
    };
    dbscan(x, eps, cfg.dbscan.min_pts)
}

fn window_basis(state: &TwoLevelState, partition: &ClusterPartition, cfg: &FrameworkConfig) -> Result<ReducedBasis> {
    let span = (
        *state.window_times.front().expect("window"),
        *state.window_times.back().expect("window"),
    );
    let snapshots = match cfg.snapshot_source {
        SnapshotSource::Agents => SnapshotMatrix::from_samples(state.window.iter().map(|x| x.view()), span)?,
        SnapshotSource::Centers => {
            let centers = state
                .window
                .iter()
                .map(|x| cluster_centers(x.view(), partition).map(|c| c.centers))
                .collect::<Result<Vec<_>>>()?;
            SnapshotMatrix::from_samples(centers.iter().map(|c| c.view()), span)?
        }
    };
    match cfg.reduction {
        Reduction::Pod { tau, mode } => pod_basis(&snapshots, tau, mode),
        Reduction::FixedRank { r } => pod_basis_with(&snapshots, RankRule::Fixed(r)),
        Reduction::Identity => Ok(ReducedBasis::identity(state.x.ncols())),
    }
}

/// One outer step: cluster, build the basis, solve the reduced problem,
/// broadcast and lift its first control, advance the full ensemble by
/// `h_t` and slide the window.
///
/// A failed SVD reuses the previous basis. When no basis is available or
/// the sweep fails, the step applies zero control and says so in the
/// diagnostics. Clustering and integration failures are returned as
/// errors tagged with their phase.
pub fn two_level_step(
    state: &mut TwoLevelState,
    kernel: &InfluenceKernel,
    cfg: &FrameworkConfig,
) -> Result<StepDiagnostics> {
    let mut phases = PhaseTimings::default();
    let (n, d) = state.x.dim();

    let clock = Instant::now();
    let x = state.x.clone();
    let partition = partition_for(x.view(), state, cfg).map_err(|e| e.in_phase(Phase::Cluster))?;
    let centers = cluster_centers(x.view(), &partition).map_err(|e| e.in_phase(Phase::Cluster))?;
    phases.cluster_ms = ms(clock);

    let clock = Instant::now();
    let mut fallback = None;
    let basis = if cfg.reduction.uses_snapshots() {
        match window_basis(state, &partition, cfg) {
            Ok(b) => {
                state.basis = Some(b.clone());
                Some(b)
            }
            Err(e) => match &state.basis {
                Some(prev) => Some(prev.clone()),
                None => {
                    fallback = Some(e.in_phase(Phase::Svd).to_string());
                    None
                }
            },
        }
    } else {
        Some(ReducedBasis::identity(d))
    };
    phases.svd_ms = ms(clock);

    let clock = Instant::now();
    let design = basis.as_ref().map(|b| -> Result<Design> {
        let reduced = b.project_rows(centers.centers.view())?;
        let problem = ControlProblem::new(centers.interaction(*kernel), cfg.ocp.gamma);
        let initial = match &state.warm {
            Some(prev) if prev[0].nrows() == partition.clusters() => Some(
                prev.iter()
                    .map(|u| b.project_rows(u.view()))
                    .collect::<Result<Vec<_>>>()?,
            ),
            _ => None,
        };
        let solution = problem.sweep(reduced.view(), &cfg.ocp, cfg.h_t, initial.as_deref())?;
        if cfg.ocp.warm_start {
            let lifted = shifted_controls(&solution.controls)
                .iter()
                .map(|u| b.lift_rows(u.view()))
                .collect::<Result<Vec<_>>>()?;
            state.warm = Some(lifted);
        }
        let per_agent = broadcast_controls(solution.controls[0].view(), &partition)?;
        Ok(Design {
            control: b.lift_rows(per_agent.view())?,
            iterations: solution.iterations,
            cost: solution.cost,
        })
    });
    let design = match design {
        Some(Ok(design)) => Some(design),
        Some(Err(e)) => {
            state.warm = None;
            fallback = Some(e.in_phase(Phase::Ocp).to_string());
            None
        }
        None => None,
    };
    phases.ocp_ms = ms(clock);

    let clock = Instant::now();
    let control = design
        .as_ref()
        .map_or_else(|| Array2::zeros((n, d)), |des| des.control.clone());
    let mut f = |_t: f64, y: ArrayView2<f64>| Ok(rhs_uncontrolled(y, kernel) + &control);
    let next = rk4_step(&mut f, x.view(), state.time, cfg.h_t).map_err(|e| e.in_phase(Phase::Advance))?;
    state.time += cfg.h_t;
    state.window.push_back(next.clone());
    state.window_times.push_back(state.time);
    while state.window.len() > cfg.warmup_steps + 1 {
        state.window.pop_front();
        state.window_times.pop_front();
    }
    state.x = next;
    phases.advance_ms = ms(clock);

    Ok(StepDiagnostics {
        clusters: partition.clusters(),
        rank: cfg.reduction.uses_snapshots().then(|| basis.as_ref().map(ReducedBasis::rank)).flatten(),
        control,
        sweep_iterations: design.as_ref().map(|des| des.iterations),
        ocp_cost: design.as_ref().map(|des| des.cost),
        phases,
        fallback,
    })
}

fn full_running_cost(x: ArrayView2<f64>, u: ArrayView2<f64>, gamma: f64) -> f64 {
    crate::control::running_cost(x, u, gamma).expect("matching shapes")
}

/// Warmup followed by two-level steps until the consensus parameter drops
/// below `consensus_tol` or `max_outer_steps` steps have been taken.
pub fn run_two_level(x0: &AgentEnsemble, kernel: &InfluenceKernel, cfg: &FrameworkConfig) -> Result<RunReport> {
    cfg.validate()?;
    kernel.validate()?;
    let started = Instant::now();
    let mut report = RunReport::default();
    let gamma = cfg.ocp.gamma;

    let clock = Instant::now();
    let traj = warmup(x0, kernel, cfg)?;
    report.phases.advance_ms += ms(clock);
    for (k, (t, x)) in traj.times().iter().zip(traj.states()).enumerate().take(traj.len() - 1) {
        let zero = Array2::zeros(x.dim());
        report.push(
            Sample {
                time: *t,
                consensus: consensus_parameter(x.view()),
                running_cost: full_running_cost(x.view(), zero.view(), gamma),
                wall_ms: if k == 0 { report.phases.advance_ms } else { 0.0 },
                ..Default::default()
            },
            cfg.h_t,
        );
    }

    let mut state = TwoLevelState::from_warmup(&traj);
    for step in 0.. {
        let consensus = consensus_parameter(state.x.view());
        if consensus < cfg.consensus_tol || step == cfg.max_outer_steps {
            report.consensus_reached = consensus < cfg.consensus_tol;
            let zero = Array2::zeros(state.x.dim());
            report.push(
                Sample {
                    time: state.time,
                    consensus,
                    running_cost: full_running_cost(state.x.view(), zero.view(), gamma),
                    ..Default::default()
                },
                cfg.h_t,
            );
            break;
        }
        report.control_start.get_or_insert(state.time);
        let x = state.x.clone();
        let t = state.time;
        let diag = two_level_step(&mut state, kernel, cfg).map_err(|e| e.at_step(step))?;
        if let Some(reason) = diag.fallback {
            report.fallbacks.push(Fallback { step, reason });
        }
        report.phases.add(&diag.phases);
        report.push(
            Sample {
                time: t,
                consensus,
                clusters: Some(diag.clusters),
                rank: diag.rank,
                running_cost: full_running_cost(x.view(), diag.control.view(), gamma),
                wall_ms: diag.phases.total_ms(),
                sweep_iterations: Some(diag.sweep_iterations.unwrap_or(0)),
            },
            cfg.h_t,
        );
    }
    report.total_wall_ms = ms(started);
    report.final_state = Some(state.x);
    Ok(report)
}
