//! Time series and timings collected by every run strategy.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Accumulated wall-clock time per phase, in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PhaseTimings {
    pub cluster_ms: f64,
    pub svd_ms: f64,
    pub ocp_ms: f64,
    pub advance_ms: f64,
}

impl PhaseTimings {
    pub fn total_ms(&self) -> f64 {
        self.cluster_ms + self.svd_ms + self.ocp_ms + self.advance_ms
    }

    pub fn add(&mut self, other: &PhaseTimings) {
        self.cluster_ms += other.cluster_ms;
        self.svd_ms += other.svd_ms;
        self.ocp_ms += other.ocp_ms;
        self.advance_ms += other.advance_ms;
    }
}

/// A step where the driver applied zero control instead of the designed one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fallback {
    pub step: usize,
    pub reason: String,
}

/// Per-sample diagnostics of a run. Row `m` describes the state at
/// `times[m]` and the control applied on `[times[m], times[m] + h_t)`;
/// the last row is the terminal state with no control applied.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub steps: Vec<usize>,
    pub times: Vec<f64>,
    pub consensus: Vec<f64>,
    pub clusters: Vec<Option<usize>>,
    pub ranks: Vec<Option<usize>>,
    pub running_cost: Vec<f64>,
    /// Left-endpoint integral of the running cost over `[t_0, times[m]]`.
    pub cumulative_cost: Vec<f64>,
    pub wall_ms: Vec<f64>,
    pub sweep_iterations: Vec<Option<usize>>,
    pub phases: PhaseTimings,
    pub total_wall_ms: f64,
    pub consensus_reached: bool,
    pub final_time: f64,
    /// First time at which a control was designed, if any.
    pub control_start: Option<f64>,
    pub fallbacks: Vec<Fallback>,
    #[serde(skip)]
    pub final_state: Option<Array2<f64>>,
}

/// One appended row.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sample {
    pub time: f64,
    pub consensus: f64,
    pub clusters: Option<usize>,
    pub rank: Option<usize>,
    pub running_cost: f64,
    pub wall_ms: f64,
    pub sweep_iterations: Option<usize>,
}

impl RunReport {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Appends a row; `h_t` is the step that led from the previous row.
    pub fn push(&mut self, sample: Sample, h_t: f64) {
        let cumulative = match (self.cumulative_cost.last(), self.running_cost.last()) {
            (Some(c), Some(r)) => c + h_t * r,
            _ => 0.0,
        };
        self.steps.push(self.times.len());
        self.times.push(sample.time);
        self.consensus.push(sample.consensus);
        self.clusters.push(sample.clusters);
        self.ranks.push(sample.rank);
        self.running_cost.push(sample.running_cost);
        self.cumulative_cost.push(cumulative);
        self.wall_ms.push(sample.wall_ms);
        self.sweep_iterations.push(sample.sweep_iterations);
        self.final_time = sample.time;
    }

    pub fn final_consensus(&self) -> Option<f64> {
        self.consensus.last().copied()
    }

    pub fn total_cost(&self) -> f64 {
        self.cumulative_cost.last().copied().unwrap_or(0.0)
    }

    /// Number of control steps actually taken.
    pub fn outer_steps(&self) -> usize {
        self.sweep_iterations.iter().filter(|s| s.is_some()).count()
    }
}
