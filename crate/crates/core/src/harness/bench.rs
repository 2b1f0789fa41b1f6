//! Timing sweeps over `(d, N)` grids.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, Strategy};
use super::init::InitSpec;
use super::run::run_strategy;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchGrid {
    pub dims: Vec<usize>,
    pub agents: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub repeats: usize,
    /// Everything except `N`, `d` and the strategy.
    pub base: ExperimentConfig,
}

impl BenchGrid {
    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.agents.is_empty() || self.strategies.is_empty() {
            return Err(Error::Config("bench grid must not be empty".into()));
        }
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be positive".into()));
        }
        for cfg in self.cells().into_iter().map(|(d, n, s)| self.cell_config(d, n, s)) {
            cfg.validate()?;
        }
        Ok(())
    }

    fn cells(&self) -> Vec<(usize, usize, Strategy)> {
        let mut out = Vec::new();
        for &d in &self.dims {
            for &n in &self.agents {
                for &s in &self.strategies {
                    out.push((d, n, s));
                }
            }
        }
        out
    }

    pub fn cell_config(&self, d: usize, n: usize, strategy: Strategy) -> ExperimentConfig {
        ExperimentConfig {
            name: format!("bench_d{d}_N{n}_{strategy}"),
            agents: n,
            dim: d,
            strategy,
            ..self.base.clone()
        }
    }
}

/// Bench grids matching the experiment presets.
pub fn bench_preset(name: &str, repeats: usize) -> Result<BenchGrid> {
    let base = ExperimentConfig {
        init: InitSpec::Preclustered {
            k0: 3,
            spread: 0.1,
            separation: 5.0,
        },
        ..ExperimentConfig::default()
    };
    let (dims, agents, strategies) = match name {
        "population" => (vec![50], vec![50, 100, 150], vec![Strategy::Full]),
        "strategies" => (
            vec![50],
            vec![50, 100, 150],
            vec![Strategy::Full, Strategy::Cluster, Strategy::TwoLevel],
        ),
        "pod" => (vec![50, 100, 150], vec![50], vec![Strategy::Full, Strategy::Pod]),
        "dimension" => (vec![50, 150], vec![50], vec![Strategy::Full]),
        other => {
            return Err(Error::Config(format!(
                "unknown bench preset '{other}', expected population, strategies, pod or dimension"
            )))
        }
    };
    Ok(BenchGrid {
        dims,
        agents,
        strategies,
        repeats,
        base,
    })
}

/// Median wall time of one grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub d: usize,
    #[serde(rename = "N")]
    pub n: usize,
    pub strategy: Strategy,
    pub wall_ms: f64,
    /// True only if every repeat reached consensus.
    pub consensus_reached: bool,
    pub final_time: f64,
    /// Wall time over that of the `(d_min, N_min)` cell of the same strategy.
    pub normalized_time: Option<f64>,
    /// Full-strategy wall time over this cell's, at the same `(d, N)`.
    pub speedup: Option<f64>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Worker count from `ABMRC_THREADS`; cells run one at a time by default
/// so that timings do not compete for cores.
pub fn threads_from_env() -> usize {
    std::env::var("ABMRC_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
        .unwrap_or(1)
}

/// Wall time, consensus flag and final time of one run.
type Outcome = (f64, bool, f64);

pub fn run_bench(grid: &BenchGrid, threads: usize) -> Result<Vec<BenchCell>> {
    grid.validate()?;
    let cells = grid.cells();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..grid.repeats).map(move |r| (c, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let outcomes: Vec<(usize, Option<Outcome>)> = pool.install(|| {
        jobs.par_iter()
            .map(|&(c, _)| {
                let (d, n, s) = cells[c];
                let run = run_strategy(&grid.cell_config(d, n, s)).ok();
                (c, run.map(|r| (r.total_wall_ms, r.consensus_reached, r.final_time)))
            })
            .collect()
    });

    let mut out: Vec<BenchCell> = cells
        .iter()
        .enumerate()
        .map(|(c, &(d, n, strategy))| {
            let runs: Vec<_> = outcomes.iter().filter(|(i, _)| *i == c).map(|(_, o)| *o).collect();
            let ok: Vec<Outcome> = runs.iter().flatten().copied().collect();
            let reached = ok.len() == runs.len() && ok.iter().all(|r| r.1);
            BenchCell {
                d,
                n,
                strategy,
                wall_ms: if ok.is_empty() { f64::NAN } else { median(ok.iter().map(|r| r.0).collect()) },
                consensus_reached: reached,
                final_time: ok.iter().map(|r| r.2).fold(0.0, f64::max),
                normalized_time: None,
                speedup: None,
            }
        })
        .collect();

    let (d_min, n_min) = (
        *grid.dims.iter().min().expect("non-empty"),
        *grid.agents.iter().min().expect("non-empty"),
    );
    let lookup: HashMap<(usize, usize, Strategy), (f64, bool)> =
        out.iter().map(|c| ((c.d, c.n, c.strategy), (c.wall_ms, c.consensus_reached))).collect();
    for cell in &mut out {
        if !cell.consensus_reached {
            continue;
        }
        if let Some(&(base, true)) = lookup.get(&(d_min, n_min, cell.strategy)) {
            cell.normalized_time = Some(cell.wall_ms / base);
        }
        if cell.strategy != Strategy::Full {
            if let Some(&(full, true)) = lookup.get(&(cell.d, cell.n, Strategy::Full)) {
                cell.speedup = Some(full / cell.wall_ms);
            }
        }
    }
    Ok(out)
}

pub fn write_bench_csv(cells: &[BenchCell], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for c in cells {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_bench_csv(path: &Path) -> Result<Vec<BenchCell>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Into::into)).collect()
}
