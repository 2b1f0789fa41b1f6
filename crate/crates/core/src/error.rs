use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Phase of a two-level outer step, used to tag step failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Cluster,
    Svd,
    Ocp,
    Advance,
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Phase::Cluster => "cluster",
            Phase::Svd => "svd",
            Phase::Ocp => "ocp",
            Phase::Advance => "advance",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape {
        expected: (usize, usize),
        got: (usize, usize),
    },

    #[error("invalid ensemble: {0}")]
    InvalidEnsemble(String),

    #[error("non-finite value during integration at t = {t}")]
    Integration { t: f64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("non-finite adjoint contribution for agent {agent}")]
    Numeric { agent: usize },

    #[error("forward-backward sweep diverged after {iterations} iterations (residual {residual:e})")]
    SweepDiverged { iterations: usize, residual: f64 },

    #[error("outer step {step} failed: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{phase} phase failed: {source}")]
    PhaseFailed {
        phase: Phase,
        #[source]
        source: Box<Error>,
    },

    #[error("snapshot window is empty")]
    EmptyWindow,

    #[error("snapshot matrix is zero; no basis can be built")]
    ZeroSnapshot,

    #[error("cluster label {label} out of range for {clusters} clusters")]
    LabelOutOfRange { label: usize, clusters: usize },

    #[error("initial condition generation failed: {0}")]
    Generation(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }

    pub(crate) fn in_phase(self, phase: Phase) -> Self {
        Error::PhaseFailed {
            phase,
            source: Box::new(self),
        }
    }
}

pub(crate) fn check_shape(expected: (usize, usize), got: (usize, usize)) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}
