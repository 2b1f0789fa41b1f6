//! Strategy dispatch and run artifacts.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Strategy};
use crate::clustering::{dbscan, epsilon_heuristic};
use crate::control::{ms, receding_horizon, running_cost};
use crate::error::Result;
use crate::framework::run_two_level;
use crate::model::{consensus_parameter, rhs_uncontrolled, AgentEnsemble, InfluenceKernel};
use crate::numerics::rk4_step;
use crate::report::{RunReport, Sample};

/// Free dynamics until consensus, `final_time` or `max_steps`. The
/// cluster count is recorded with the heuristic radius at every sample.
pub fn run_uncontrolled(
    x0: &AgentEnsemble,
    kernel: &InfluenceKernel,
    h_t: f64,
    consensus_tol: f64,
    final_time: Option<f64>,
    max_steps: usize,
) -> Result<RunReport> {
    let started = Instant::now();
    let mut report = RunReport::default();
    let mut x = x0.states().to_owned();
    let t0 = x0.time();
    let budget = final_time.map(|t| ((t / h_t) - 1e-9).ceil().max(0.0) as usize);
    let last_step = budget.map_or(max_steps, |b| b.min(max_steps));
    let zero = Array2::zeros(x.dim());
    let mut f = |_t: f64, y: ArrayView2<f64>| Ok(rhs_uncontrolled(y, kernel));

    for step in 0.. {
        let t = t0 + step as f64 * h_t;
        let clock = Instant::now();
        let k = dbscan(x.view(), epsilon_heuristic(x.view()), 1)?.clusters();
        let cluster_ms = ms(clock);
        let consensus = consensus_parameter(x.view());
        let sample = Sample {
            time: t,
            consensus,
            clusters: Some(k),
            running_cost: running_cost(x.view(), zero.view(), 1.0)?,
            wall_ms: cluster_ms,
            ..Default::default()
        };
        report.phases.cluster_ms += cluster_ms;
        if consensus < consensus_tol || step == last_step {
            report.consensus_reached = consensus < consensus_tol;
            report.push(sample, h_t);
            break;
        }
        let clock = Instant::now();
        x = rk4_step(&mut f, x.view(), t, h_t).map_err(|e| e.at_step(step))?;
        let advance_ms = ms(clock);
        report.phases.advance_ms += advance_ms;
        report.push(
            Sample {
                wall_ms: cluster_ms + advance_ms,
                ..sample
            },
            h_t,
        );
    }
    report.total_wall_ms = ms(started);
    report.final_state = Some(x);
    Ok(report)
}

/// Generates the initial ensemble and runs the configured strategy.
pub fn run_strategy(cfg: &ExperimentConfig) -> Result<RunReport> {
    cfg.validate()?;
    let x0 = cfg.init.generate(cfg.agents, cfg.dim, cfg.seed)?;
    let fw = cfg.framework();
    match cfg.strategy {
        Strategy::Uncontrolled => run_uncontrolled(
            &x0,
            &cfg.kernel,
            fw.h_t,
            fw.consensus_tol,
            cfg.final_time,
            fw.max_outer_steps,
        ),
        Strategy::Full => receding_horizon(&x0, &cfg.kernel, &fw.ocp, fw.h_t, fw.consensus_tol, fw.max_outer_steps),
        Strategy::Cluster | Strategy::Pod | Strategy::TwoLevel => run_two_level(&x0, &cfg.kernel, &fw),
    }
}

/// One row of `<name>.series.csv`; absent quantities are empty fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub step: usize,
    pub time: f64,
    #[serde(rename = "X")]
    pub consensus: f64,
    #[serde(rename = "K")]
    pub clusters: Option<usize>,
    pub r: Option<usize>,
    pub running_cost: f64,
    pub cumulative_cost: f64,
    pub wall_ms: f64,
}

pub fn series_rows(report: &RunReport) -> Vec<SeriesRow> {
    (0..report.len())
        .map(|m| SeriesRow {
            step: report.steps[m],
            time: report.times[m],
            consensus: report.consensus[m],
            clusters: report.clusters[m],
            r: report.ranks[m],
            running_cost: report.running_cost[m],
            cumulative_cost: report.cumulative_cost[m],
            wall_ms: report.wall_ms[m],
        })
        .collect()
}

pub fn write_series_csv(report: &RunReport, path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in series_rows(report) {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_series_csv(path: &Path) -> Result<Vec<SeriesRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSummary {
    pub config: ExperimentConfig,
    pub consensus_reached: bool,
    pub final_time: f64,
    pub final_consensus: Option<f64>,
    pub total_cost: f64,
    pub total_wall_ms: f64,
    pub outer_steps: usize,
    pub control_start: Option<f64>,
    pub phases: crate::report::PhaseTimings,
    pub fallbacks: Vec<crate::report::Fallback>,
    pub error: Option<String>,
}

impl RunSummary {
    pub fn from_report(config: &ExperimentConfig, report: &RunReport) -> Self {
        Self {
            config: config.clone(),
            consensus_reached: report.consensus_reached,
            final_time: report.final_time,
            final_consensus: report.final_consensus(),
            total_cost: report.total_cost(),
            total_wall_ms: report.total_wall_ms,
            outer_steps: report.outer_steps(),
            control_start: report.control_start,
            phases: report.phases,
            fallbacks: report.fallbacks.clone(),
            error: None,
        }
    }

    pub fn failed(config: &ExperimentConfig, error: String) -> Self {
        Self {
            config: config.clone(),
            consensus_reached: false,
            final_time: 0.0,
            final_consensus: None,
            total_cost: 0.0,
            total_wall_ms: 0.0,
            outer_steps: 0,
            control_start: None,
            phases: Default::default(),
            fallbacks: Vec::new(),
            error: Some(error),
        }
    }
}

pub struct Artifacts {
    pub series: Option<PathBuf>,
    pub summary: PathBuf,
}

pub fn write_summary(summary: &RunSummary, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}.summary.json", summary.config.name));
    fs::write(&path, serde_json::to_string_pretty(summary)?)?;
    Ok(path)
}

/// Runs the experiment and writes its series and summary into
/// `cfg.out_dir`. A failing strategy still produces a summary carrying the
/// error before the error is returned.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunReport, Artifacts)> {
    match run_strategy(cfg) {
        Ok(report) => {
            fs::create_dir_all(&cfg.out_dir)?;
            let series = cfg.out_dir.join(format!("{}.series.csv", cfg.name));
            write_series_csv(&report, &series)?;
            let summary = write_summary(&RunSummary::from_report(cfg, &report), &cfg.out_dir)?;
            Ok((
                report,
                Artifacts {
                    series: Some(series),
                    summary,
                },
            ))
        }
        Err(e) => {
            write_summary(&RunSummary::failed(cfg, e.to_string()), &cfg.out_dir)?;
            Err(e)
        }
    }
}
