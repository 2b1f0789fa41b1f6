//! Experiment configuration and the built-in presets.

use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::init::InitSpec;
use crate::error::{Error, Result};
use crate::framework::{FrameworkConfig, Reduction};
use crate::model::InfluenceKernel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Uncontrolled,
    /// Receding-horizon control of every agent.
    Full,
    /// Control of the cluster centers, broadcast to members.
    Cluster,
    /// Control of the POD-reduced agent system.
    Pod,
    TwoLevel,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::Uncontrolled,
        Strategy::Full,
        Strategy::Cluster,
        Strategy::Pod,
        Strategy::TwoLevel,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Strategy::Uncontrolled => "uncontrolled",
            Strategy::Full => "full",
            Strategy::Cluster => "cluster",
            Strategy::Pod => "pod",
            Strategy::TwoLevel => "two_level",
        }
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s || (s == "two-level" && *st == Strategy::TwoLevel))
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Stem of the output files.
    pub name: String,
    #[serde(rename = "N")]
    pub agents: usize,
    #[serde(rename = "d")]
    pub dim: usize,
    pub kernel: InfluenceKernel,
    pub strategy: Strategy,
    pub seed: u64,
    pub init: InitSpec,
    /// Solver settings; the two-level fields are ignored by strategies
    /// that do not use them.
    #[serde(default)]
    pub control: FrameworkConfig,
    /// Time budget of uncontrolled runs, on top of `max_outer_steps`.
    #[serde(default)]
    pub final_time: Option<f64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "run".into(),
            agents: 10,
            dim: 2,
            kernel: InfluenceKernel::SmoothedGhk { alpha: 1.6 },
            strategy: Strategy::TwoLevel,
            seed: 1,
            init: InitSpec::Preclustered {
                k0: 3,
                spread: 0.2,
                separation: 3.0,
            },
            control: FrameworkConfig::default(),
            final_time: None,
            out_dir: default_out_dir(),
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let cfg: Self = serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.agents == 0 || self.dim == 0 {
            return Err(Error::Config(format!("N and d must be positive, got N = {}, d = {}", self.agents, self.dim)));
        }
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return Err(Error::Config(format!("invalid run name '{}'", self.name)));
        }
        if let InitSpec::Preclustered { k0, .. } = self.init {
            if k0 == 0 || k0 > self.agents {
                return Err(Error::Config(format!("need 1 <= K0 <= N, got K0 = {k0}")));
            }
        }
        if let Some(t) = self.final_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::Config(format!("final_time must be positive, got {t}")));
            }
        }
        self.kernel.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.framework().validate()
    }

    /// Framework settings as the chosen strategy uses them.
    pub fn framework(&self) -> FrameworkConfig {
        let mut fw = self.control;
        match self.strategy {
            Strategy::Cluster => {
                fw.reduction = Reduction::Identity;
                fw.warmup_steps = 0;
            }
            Strategy::Pod => fw.dbscan.enabled = false,
            _ => {}
        }
        fw
    }
}

fn preclustered() -> InitSpec {
    InitSpec::Preclustered {
        k0: 3,
        spread: 0.1,
        separation: 5.0,
    }
}

fn ghk(alpha: f64) -> InfluenceKernel {
    InfluenceKernel::SmoothedGhk { alpha }
}

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 4] = ["regimes", "population", "dimension", "large"];

/// Built-in experiment families. The initial distributions are
/// reconstructions: three well separated Gaussian blobs.
pub fn preset(name: &str) -> Result<Vec<ExperimentConfig>> {
    let base = ExperimentConfig::default();
    let cfgs = match name {
        // small planar ensembles under four kernel sharpnesses
        "regimes" => [0.1, 1.6, 5.0, 300.0]
            .into_iter()
            .flat_map(|alpha| {
                [Strategy::Uncontrolled, Strategy::Full].into_iter().map(move |strategy| ExperimentConfig {
                    name: format!("regimes_alpha{alpha}_{strategy}"),
                    agents: 10,
                    dim: 2,
                    kernel: ghk(alpha),
                    strategy,
                    init: InitSpec::Preclustered {
                        k0: 3,
                        spread: 0.2,
                        separation: 3.0,
                    },
                    final_time: (strategy == Strategy::Uncontrolled).then_some(20.0),
                    ..ExperimentConfig::default()
                })
            })
            .collect(),
        "population" => [50, 100, 150]
            .into_iter()
            .map(|n| ExperimentConfig {
                name: format!("population_N{n}"),
                agents: n,
                dim: 50,
                strategy: Strategy::Full,
                init: preclustered(),
                ..base.clone()
            })
            .collect(),
        "dimension" => [50, 100, 150]
            .into_iter()
            .map(|d| ExperimentConfig {
                name: format!("dimension_d{d}"),
                agents: 50,
                dim: d,
                strategy: Strategy::Pod,
                init: preclustered(),
                ..base.clone()
            })
            .collect(),
        "large" => [Strategy::TwoLevel, Strategy::Full]
            .into_iter()
            .map(|strategy| ExperimentConfig {
                name: format!("large_{strategy}"),
                agents: 150,
                dim: 150,
                strategy,
                init: preclustered(),
                control: FrameworkConfig {
                    warmup_steps: 20,
                    consensus_tol: 1e-19,
                    ..FrameworkConfig::default()
                },
                ..base.clone()
            })
            .collect(),
        other => {
            return Err(Error::Config(format!(
                "unknown preset '{other}', expected one of {}",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(cfgs)
}
