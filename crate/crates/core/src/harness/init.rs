//! Seeded initial conditions.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::AgentEnsemble;

const MAX_DRAWS_PER_MEAN: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitSpec {
    Preclustered {
        k0: usize,
        spread: f64,
        separation: f64,
    },
    Uniform {
        low: f64,
        high: f64,
    },
}

impl InitSpec {
    pub fn generate(&self, n: usize, d: usize, seed: u64) -> Result<AgentEnsemble> {
        match *self {
            InitSpec::Preclustered {
                k0,
                spread,
                separation,
            } => generate_preclustered(n, d, k0, spread, separation, seed),
            InitSpec::Uniform { low, high } => generate_uniform(n, d, low, high, seed),
        }
    }
}

/// `k0` Gaussian blobs of standard deviation `spread` around means at
/// pairwise distance at least `separation`.
///
/// Mean coordinates are `2 separation u^2` with `u` uniform on `[0, 1)`,
/// which skews them toward the origin so the mean opinion is not placed
/// symmetrically. Agent `i` belongs to blob `i mod k0`.
pub fn generate_preclustered(
    n: usize,
    d: usize,
    k0: usize,
    spread: f64,
    separation: f64,
    seed: u64,
) -> Result<AgentEnsemble> {
    if n == 0 || d == 0 {
        return Err(Error::Generation(format!("need N, d >= 1, got N = {n}, d = {d}")));
    }
    if k0 == 0 || k0 > n {
        return Err(Error::Generation(format!("need 1 <= K0 <= N, got K0 = {k0}, N = {n}")));
    }
    if !(spread >= 0.0 && spread.is_finite()) || !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::Generation("spread and separation must be finite and >= 0".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = 2.0 * separation.max(f64::MIN_POSITIVE);
    let mut means: Vec<Vec<f64>> = Vec::with_capacity(k0);
    for l in 0..k0 {
        let mut placed = false;
        for _ in 0..MAX_DRAWS_PER_MEAN {
            let candidate: Vec<f64> = (0..d)
                .map(|_| {
                    let u: f64 = rng.random();
                    side * u * u
                })
                .collect();
            let far_enough = means.iter().all(|m| {
                let s2: f64 = m.iter().zip(&candidate).map(|(a, b)| (a - b) * (a - b)).sum();
                s2.sqrt() >= separation
            });
            if far_enough {
                means.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Generation(format!(
                "could not place mean {} of {k0} at separation {separation} in dimension {d}",
                l + 1
            )));
        }
    }

    let states = Array2::from_shape_fn((n, d), |(i, k)| {
        let noise: f64 = StandardNormal.sample(&mut rng);
        means[i % k0][k] + spread * noise
    });
    AgentEnsemble::new(states, 0.0)
}

pub fn generate_uniform(n: usize, d: usize, low: f64, high: f64, seed: u64) -> Result<AgentEnsemble> {
    if !(high > low) || !low.is_finite() || !high.is_finite() {
        return Err(Error::Generation(format!("empty box [{low}, {high}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = Array2::from_shape_fn((n, d), |_| rng.random_range(low..high));
    AgentEnsemble::new(states, 0.0)
}
