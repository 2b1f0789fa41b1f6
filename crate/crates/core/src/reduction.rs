//! Snapshot matrices, POD bases and Galerkin-reduced dynamics.
//!
//! A basis `Psi` (`d x r`, orthonormal columns) maps agent states to
//! reduced coordinates by `z = Psi^T x` and back by `x = Psi z`. Ensembles
//! are stored row-wise, so whole ensembles project as `X Psi` and lift as
//! `Z Psi^T`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{check_shape, Error, Result};
use crate::model::{consensus_parameter, InfluenceKernel, Interaction};
use crate::numerics::{left_singular, RankRule, Trajectory};

/// Sampled states laid out column-wise, entity by entity.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    data: Array2<f64>,
    window: (f64, f64),
    entities: usize,
    samples: usize,
}

impl SnapshotMatrix {
    /// Builds `S = [S_1, ..., S_N]` with `S_i = [x_i(t_0), ..., x_i(t_n)]`
    /// from per-sample ensembles (`entities x d` each).
    pub fn from_samples<'a, I>(samples: I, window: (f64, f64)) -> Result<Self>
    where
        I: IntoIterator<Item = ArrayView2<'a, f64>>,
    {
        let samples: Vec<ArrayView2<f64>> = samples.into_iter().collect();
        let Some(first) = samples.first() else {
            return Err(Error::EmptyWindow);
        };
        let (entities, d) = first.dim();
        for s in &samples {
            check_shape((entities, d), s.dim())?;
        }
        let count = samples.len();
        let data = Array2::from_shape_fn((d, entities * count), |(k, col)| {
            samples[col % count][[col / count, k]]
        });
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::Domain("snapshot contains non-finite values".into()));
        }
        Ok(Self {
            data,
            window,
            entities,
            samples: count,
        })
    }

    pub fn data(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn window(&self) -> (f64, f64) {
        self.window
    }

    pub fn entities(&self) -> usize {
        self.entities
    }

    pub fn samples(&self) -> usize {
        self.samples
    }
}

/// Collects the trajectory samples with `t_first <= t <= t_last`.
pub fn assemble_snapshots(traj: &Trajectory, window: (f64, f64)) -> Result<SnapshotMatrix> {
    let (lo, hi) = window;
    let times = traj.times();
    let slack = 1e-9 * (times[times.len() - 1] - times[0]).abs().max(1.0);
    if !(lo <= hi) || lo < times[0] - slack || hi > times[times.len() - 1] + slack {
        return Err(Error::Domain(format!(
            "window [{lo}, {hi}] is not inside [{}, {}]",
            times[0],
            times[times.len() - 1]
        )));
    }
    let picked: Vec<usize> = (0..times.len())
        .filter(|&k| times[k] >= lo - slack && times[k] <= hi + slack)
        .collect();
    if picked.is_empty() {
        return Err(Error::EmptyWindow);
    }
    let window = (times[picked[0]], times[picked[picked.len() - 1]]);
    SnapshotMatrix::from_samples(picked.iter().map(|&k| traj.states()[k].view()), window)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdMode {
    Absolute,
    Relative,
}

/// Orthonormal basis `Psi_r` and the singular values it retains.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBasis {
    basis: Array2<f64>,
    singular_values: Vec<f64>,
    threshold_used: f64,
}

impl ReducedBasis {
    /// `r = d`, `Psi = I`.
    pub fn identity(d: usize) -> Self {
        Self {
            basis: Array2::eye(d),
            singular_values: Vec::new(),
            threshold_used: 0.0,
        }
    }

    pub fn basis(&self) -> ArrayView2<'_, f64> {
        self.basis.view()
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Absolute singular-value level that decided the rank.
    pub fn threshold_used(&self) -> f64 {
        self.threshold_used
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn full_dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Rows of `x` (`n x d`) in reduced coordinates (`n x r`).
    pub fn project_rows(&self, x: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_shape((x.nrows(), self.full_dim()), x.dim())?;
        Ok(x.dot(&self.basis))
    }

    /// Rows of `z` (`n x r`) lifted back to `R^d`.
    pub fn lift_rows(&self, z: ArrayView2<f64>) -> Result<Array2<f64>> {
        check_shape((z.nrows(), self.rank()), z.dim())?;
        Ok(z.dot(&self.basis.t()))
    }
}

/// POD basis from the left singular vectors of `s`, keeping
/// `sigma_i >= tau` (absolute) or `sigma_i / sigma_1 >= tau` (relative).
/// At least one vector is always kept.
pub fn pod_basis(s: &SnapshotMatrix, tau: f64, mode: ThresholdMode) -> Result<ReducedBasis> {
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::Domain(format!("tau must be positive, got {tau}")));
    }
    let rule = match mode {
        ThresholdMode::Absolute => RankRule::Absolute(tau),
        ThresholdMode::Relative => RankRule::Relative(tau),
    };
    pod_basis_with(s, rule)
}

/// POD basis with an arbitrary rank rule; the rank is clamped to at least 1.
pub fn pod_basis_with(s: &SnapshotMatrix, rule: RankRule) -> Result<ReducedBasis> {
    let mut svd = left_singular(s.data(), rule)?;
    if svd.spectrum.is_empty() {
        return Err(Error::ZeroSnapshot);
    }
    if svd.rank() == 0 {
        svd = left_singular(s.data(), RankRule::Fixed(1))?;
    }
    let threshold_used = match rule {
        RankRule::Absolute(tau) => tau,
        RankRule::Relative(tau) => tau * svd.spectrum[0],
        RankRule::All | RankRule::Fixed(_) => svd.singular_values[svd.rank() - 1],
    };
    Ok(ReducedBasis {
        basis: svd.left,
        singular_values: svd.singular_values,
        threshold_used,
    })
}

/// `Psi_r^T x`.
pub fn project_state(b: &ReducedBasis, x: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_shape((b.full_dim(), 1), (x.len(), 1))?;
    Ok(b.basis.t().dot(&x))
}

/// `Psi_r z`.
pub fn lift_state(b: &ReducedBasis, z: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_shape((b.rank(), 1), (z.len(), 1))?;
    Ok(b.basis.dot(&z))
}

/// Agent drift evaluated directly in reduced coordinates. The basis has
/// orthonormal columns, so reduced distances equal the lifted ones.
pub fn rhs_reduced_full(xr: ArrayView2<f64>, kernel: &InfluenceKernel) -> Array2<f64> {
    Interaction::uniform(*kernel, xr.nrows()).drift(xr)
}

/// Weighted center drift in reduced coordinates.
pub fn rhs_reduced_clustered(
    cr: ArrayView2<f64>,
    weights: &[f64],
    total_agents: usize,
    kernel: &InfluenceKernel,
) -> Result<Array2<f64>> {
    check_shape((cr.nrows(), 1), (weights.len(), 1))?;
    let total: f64 = weights.iter().sum();
    if (total - total_agents as f64).abs() > 1e-9 * total.max(1.0) {
        return Err(Error::Domain(format!(
            "cluster weights sum to {total}, expected {total_agents}"
        )));
    }
    Ok(Interaction::weighted(*kernel, weights, total_agents as f64).drift(cr))
}

/// Consensus parameter of reduced states next to that of their lifts.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LiftCheck {
    pub reduced: Vec<f64>,
    pub lifted: Vec<f64>,
    pub max_abs_diff: f64,
}

pub fn verify_consensus_lift(b: &ReducedBasis, reduced: &Trajectory) -> Result<LiftCheck> {
    let mut out = LiftCheck {
        reduced: Vec::with_capacity(reduced.len()),
        lifted: Vec::with_capacity(reduced.len()),
        max_abs_diff: 0.0,
    };
    for z in reduced.states() {
        let xr = consensus_parameter(z.view());
        let xl = consensus_parameter(b.lift_rows(z.view())?.view());
        out.max_abs_diff = out.max_abs_diff.max((xr - xl).abs());
        out.reduced.push(xr);
        out.lifted.push(xl);
    }
    Ok(out)
}

/// Largest entry of `|Psi^T Psi - I|`.
pub fn orthonormality_defect(b: &ReducedBasis) -> f64 {
    let gram = b.basis.t().dot(&b.basis);
    let mut worst: f64 = 0.0;
    for ((i, j), v) in gram.indexed_iter() {
        let target = if i == j { 1.0 } else { 0.0 };
        worst = worst.max((v - target).abs());
    }
    worst
}

/// `|S - Psi Psi^T S|_F`.
pub fn projection_residual(b: &ReducedBasis, s: &SnapshotMatrix) -> f64 {
    let coeffs = b.basis.t().dot(&s.data);
    let residual = &s.data - &b.basis.dot(&coeffs);
    residual.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Per-entity mean of a snapshot matrix, handy for inspecting windows.
pub fn snapshot_mean(s: &SnapshotMatrix) -> Array1<f64> {
    s.data.mean_axis(Axis(1)).expect("non-empty snapshot")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::rhs_uncontrolled;
    use crate::numerics::{integrate, truncated_svd};
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    fn single(x: Array2<f64>) -> SnapshotMatrix {
        SnapshotMatrix::from_samples([x.view()], (0.0, 0.0)).unwrap()
    }

    #[test]
    fn one_sample_one_entity() {
        let s = single(array![[1.0, 2.0, 3.0]]);
        assert_eq!(s.data(), array![[1.0], [2.0], [3.0]]);
    }

    #[test]
    fn entity_major_layout() {
        let traj = Trajectory::new(
            vec![0.0, 0.5, 1.0],
            vec![
                array![[1.0, 2.0], [3.0, 4.0]],
                array![[5.0, 6.0], [7.0, 8.0]],
                array![[9.0, 10.0], [11.0, 12.0]],
            ],
        )
        .unwrap();
        let s = assemble_snapshots(&traj, (0.0, 1.0)).unwrap();
        let expected = array![[1.0, 5.0, 9.0, 3.0, 7.0, 11.0], [2.0, 6.0, 10.0, 4.0, 8.0, 12.0]];
        assert_eq!(s.data(), expected);
        assert_eq!((s.entities(), s.samples()), (2, 3));

        let tail = assemble_snapshots(&traj, (0.5, 1.0)).unwrap();
        assert_eq!(tail.window(), (0.5, 1.0));
        assert_eq!(tail.data().column(0), array![5.0, 6.0]);
    }

    #[test]
    fn bad_windows() {
        let traj = Trajectory::new(vec![0.0, 1.0], vec![array![[1.0]], array![[2.0]]]).unwrap();
        assert!(matches!(assemble_snapshots(&traj, (0.2, 0.8)), Err(Error::EmptyWindow)));
        assert!(assemble_snapshots(&traj, (0.0, 2.0)).is_err());
        assert!(SnapshotMatrix::from_samples(Vec::<ArrayView2<f64>>::new(), (0.0, 0.0)).is_err());
    }

    #[test]
    fn constant_trajectory_is_rank_one() {
        let x = array![[1.0, -2.0, 0.5]];
        let traj = Trajectory::new(vec![0.0, 1.0, 2.0], vec![x.clone(), x.clone(), x]).unwrap();
        let s = assemble_snapshots(&traj, (0.0, 2.0)).unwrap();
        let b = pod_basis_with(&s, RankRule::All).unwrap();
        assert_eq!(b.rank(), 1);
    }

    #[test]
    fn hand_rank_one_example() {
        let s = single(array![[1.0, 2.0], [2.0, 4.0]].t().to_owned());
        let b = pod_basis(&s, 1e-3, ThresholdMode::Relative).unwrap();
        assert_eq!(b.rank(), 1);
        assert_relative_eq!(b.singular_values()[0], 5.0, epsilon = 1e-12);
        let root5 = 5f64.sqrt();
        assert_relative_eq!(b.basis()[[0, 0]], 1.0 / root5, epsilon = 1e-12);
        assert_relative_eq!(b.basis()[[1, 0]], 2.0 / root5, epsilon = 1e-12);
    }

    #[test]
    fn rank_clamps_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let s = single(random(6, 4, &mut rng));
        let b = pod_basis(&s, 2.0, ThresholdMode::Relative).unwrap();
        assert_eq!(b.rank(), 1);
        let b = pod_basis(&s, 1e6, ThresholdMode::Absolute).unwrap();
        assert_eq!(b.rank(), 1);
    }

    #[test]
    fn absolute_and_relative_thresholds() {
        // singular values 4, 2, 0.5 on the coordinate axes
        let s = single(array![[4.0, 0.0, 0.0], [0.0, 2.0, 0.0], [0.0, 0.0, 0.5]]);
        assert_eq!(pod_basis(&s, 1.0, ThresholdMode::Absolute).unwrap().rank(), 2);
        assert_eq!(pod_basis(&s, 0.5, ThresholdMode::Absolute).unwrap().rank(), 3);
        assert_eq!(pod_basis(&s, 0.5, ThresholdMode::Relative).unwrap().rank(), 2);
        let b = pod_basis(&s, 0.25, ThresholdMode::Relative).unwrap();
        assert_eq!(b.rank(), 2);
        assert_eq!(b.threshold_used(), 1.0);
    }

    #[test]
    fn zero_snapshot_errors() {
        let s = single(Array2::zeros((3, 2)));
        assert!(matches!(pod_basis(&s, 1e-3, ThresholdMode::Relative), Err(Error::ZeroSnapshot)));
        assert!(pod_basis(&single(array![[1.0]]), 0.0, ThresholdMode::Relative).is_err());
    }

    #[test]
    fn basis_is_orthonormal_and_eckart_young_holds() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (rows, cols) in [(5, 12), (12, 5), (8, 8)] {
            let s = single(random(cols, rows, &mut rng));
            let full = truncated_svd(s.data(), RankRule::All).unwrap();
            for r in 1..rows.min(cols) {
                let b = pod_basis_with(&s, RankRule::Fixed(r)).unwrap();
                assert!(orthonormality_defect(&b) <= 1e-12);
                let tail: f64 = full.spectrum[r..].iter().map(|v| v * v).sum::<f64>().sqrt();
                let res = projection_residual(&b, &s);
                assert!((res - tail).abs() <= 1e-10 * tail.max(1.0), "{res} vs {tail}");
            }
        }
    }

    #[test]
    fn projection_maps() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let s = single(random(9, 6, &mut rng));
        let b = pod_basis_with(&s, RankRule::Fixed(3)).unwrap();

        let z = array![0.3, -1.2, 2.0];
        let x = lift_state(&b, z.view()).unwrap();
        let back = project_state(&b, x.view()).unwrap();
        for (a, c) in z.iter().zip(back.iter()) {
            assert_relative_eq!(a, c, epsilon = 1e-12);
        }
        // a vector in the span is fixed by the projector
        let again = lift_state(&b, back.view()).unwrap();
        for (a, c) in x.iter().zip(again.iter()) {
            assert_relative_eq!(a, c, epsilon = 1e-12);
        }

        let zero = Array1::zeros(6);
        assert!(project_state(&b, zero.view()).unwrap().iter().all(|v| *v == 0.0));
        assert!(lift_state(&b, Array1::zeros(3).view()).unwrap().iter().all(|v| *v == 0.0));

        for _ in 0..100 {
            let x: Array1<f64> = (0..6).map(|_| rng.random_range(-3.0..3.0)).collect();
            let p = lift_state(&b, project_state(&b, x.view()).unwrap().view()).unwrap();
            assert!(p.dot(&p).sqrt() <= x.dot(&x).sqrt() + 1e-12);
        }

        assert!(project_state(&b, Array1::zeros(5).view()).is_err());
        assert!(lift_state(&b, Array1::zeros(4).view()).is_err());
    }

    #[test]
    fn distances_are_preserved() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let s = single(random(10, 7, &mut rng));
        let b = pod_basis_with(&s, RankRule::Fixed(4)).unwrap();
        for _ in 0..50 {
            let z1: Array1<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let z2: Array1<f64> = (0..4).map(|_| rng.random_range(-5.0..5.0)).collect();
            let dz = &z1 - &z2;
            let dx = lift_state(&b, dz.view()).unwrap();
            assert!((dx.dot(&dx).sqrt() - dz.dot(&dz).sqrt()).abs() <= 1e-12);
        }
    }

    #[test]
    fn reduced_rhs_examples() {
        let kernel = InfluenceKernel::SmoothedGhk { alpha: 1.6 };
        let same = array![[1.0, 2.0], [1.0, 2.0]];
        assert!(rhs_reduced_full(same.view(), &kernel).iter().all(|v| *v == 0.0));

        let x = array![[0.0, 1.0, 0.5], [1.0, 0.0, -1.0], [2.0, 2.0, 0.0]];
        let id = ReducedBasis::identity(3);
        let xr = id.project_rows(x.view()).unwrap();
        assert_eq!(rhs_reduced_full(xr.view(), &kernel), rhs_uncontrolled(x.view(), &kernel));

        let one = rhs_reduced_clustered(array![[3.0, 1.0]].view(), &[5.0], 5, &kernel).unwrap();
        assert!(one.iter().all(|v| *v == 0.0));
        let unit = rhs_reduced_clustered(x.view(), &[1.0; 3], 3, &kernel).unwrap();
        let plain = rhs_reduced_full(x.view(), &kernel);
        for (a, b) in unit.iter().zip(plain.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
        assert!(rhs_reduced_clustered(x.view(), &[1.0; 3], 4, &kernel).is_err());
    }

    #[test]
    fn reduced_and_full_drift_commute() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kernel = InfluenceKernel::SmoothedGhk { alpha: 1.6 };
        let s = single(random(12, 6, &mut rng));
        let b = pod_basis_with(&s, RankRule::Fixed(3)).unwrap();
        let z = random(7, 3, &mut rng);
        let lifted = b.lift_rows(z.view()).unwrap();
        let via_full = b
            .project_rows(rhs_uncontrolled(lifted.view(), &kernel).view())
            .unwrap();
        let direct = rhs_reduced_full(z.view(), &kernel);
        for (a, c) in via_full.iter().zip(direct.iter()) {
            assert!((a - c).abs() <= 1e-10);
        }
    }

    #[test]
    fn lifted_consensus_matches_reduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let kernel = InfluenceKernel::SmoothedGhk { alpha: 1.6 };
        let s = single(random(20, 8, &mut rng));
        let b = pod_basis_with(&s, RankRule::Fixed(3)).unwrap();
        let z0 = random(6, 3, &mut rng) * 2.0;
        let traj = integrate(|_, z| Ok(rhs_reduced_full(z, &kernel)), z0.view(), 0.0, 2.0, 0.05).unwrap();
        let check = verify_consensus_lift(&b, &traj).unwrap();
        assert_eq!(check.reduced.len(), traj.len());
        assert!(check.max_abs_diff <= 1e-12);

        let flat = Trajectory::new(vec![0.0], vec![array![[1.0, 1.0, 1.0], [1.0, 1.0, 1.0]]]).unwrap();
        let check = verify_consensus_lift(&b, &flat).unwrap();
        assert_eq!(check.lifted.len(), 1);
        assert!(check.lifted[0] <= 1e-14);
    }
}
