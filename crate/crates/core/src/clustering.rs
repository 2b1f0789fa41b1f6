//! Density-based agent clustering and the weighted center-of-mass system.

use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::model::{InfluenceKernel, Interaction};
use crate::numerics::frobenius_norm;

/// Partition of agents `0..N` into clusters `0..K`.
///
/// Cluster ids are ordered by the smallest agent index they contain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClusterPartition {
    labels: Vec<usize>,
    index_sets: Vec<Vec<usize>>,
}

impl ClusterPartition {
    /// Builds a partition from arbitrary labels, renumbering clusters by
    /// first appearance.
    pub fn from_labels(raw: &[usize]) -> Self {
        let mut map = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        let mut index_sets: Vec<Vec<usize>> = Vec::new();
        for (i, &r) in raw.iter().enumerate() {
            let id = *map.entry(r).or_insert_with(|| {
                index_sets.push(Vec::new());
                index_sets.len() - 1
            });
            index_sets[id].push(i);
            labels.push(id);
        }
        Self { labels, index_sets }
    }

    /// Every agent in its own cluster.
    pub fn singletons(n: usize) -> Self {
        Self {
            labels: (0..n).collect(),
            index_sets: (0..n).map(|i| vec![i]).collect(),
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn index_sets(&self) -> &[Vec<usize>] {
        &self.index_sets
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.index_sets.iter().map(Vec::len).collect()
    }

    pub fn clusters(&self) -> usize {
        self.index_sets.len()
    }

    pub fn agents(&self) -> usize {
        self.labels.len()
    }
}

/// Cluster centers with their sizes as weights.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterEnsemble {
    pub centers: Array2<f64>,
    pub weights: Vec<f64>,
    pub total_agents: usize,
}

impl ClusterEnsemble {
    pub fn interaction(&self, kernel: InfluenceKernel) -> Interaction<'_> {
        Interaction::weighted(kernel, &self.weights, self.total_agents as f64)
    }
}

/// `|X|_F / N`, the default DBSCAN radius.
pub fn epsilon_heuristic(x: ArrayView2<f64>) -> f64 {
    frobenius_norm(x) / x.nrows() as f64
}

fn pairwise_within(x: ArrayView2<f64>, eps: f64) -> Vec<Vec<usize>> {
    let n = x.nrows();
    let eps2 = eps * eps;
    let mut neighbors = vec![Vec::new(); n];
    for i in 0..n {
        let xi = x.row(i);
        for j in (i + 1)..n {
            let s2: f64 = xi
                .iter()
                .zip(x.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            if s2 <= eps2 {
                neighbors[i].push(j);
                neighbors[j].push(i);
            }
        }
    }
    neighbors
}

/// DBSCAN over Euclidean distance with inclusive neighborhoods
/// (`dist <= eps`; a point counts as its own neighbor).
///
/// Points that are neither core nor reachable from a core point become
/// singleton clusters, so the result is always a full partition.
pub fn dbscan(x: ArrayView2<f64>, eps: f64, min_pts: usize) -> Result<ClusterPartition> {
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(Error::Domain(format!("eps must be finite and non-negative, got {eps}")));
    }
    if min_pts == 0 {
        return Err(Error::Domain("min_pts must be at least 1".into()));
    }
    let n = x.nrows();
    let neighbors = pairwise_within(x, eps);
    let is_core: Vec<bool> = neighbors.iter().map(|nb| nb.len() + 1 >= min_pts).collect();

    const UNSET: usize = usize::MAX;
    let mut labels = vec![UNSET; n];
    let mut next = 0;
    let mut queue = VecDeque::new();
    for start in 0..n {
        if labels[start] != UNSET || !is_core[start] {
            continue;
        }
        labels[start] = next;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            if !is_core[p] {
                continue;
            }
            for &q in &neighbors[p] {
                if labels[q] == UNSET {
                    labels[q] = next;
                    queue.push_back(q);
                }
            }
        }
        next += 1;
    }
    for label in labels.iter_mut().filter(|l| **l == UNSET) {
        *label = next;
        next += 1;
    }
    Ok(ClusterPartition::from_labels(&labels))
}

/// Centers of mass `(1/N_l) sum_{i in I_l} x_i`.
pub fn cluster_centers(x: ArrayView2<f64>, partition: &ClusterPartition) -> Result<ClusterEnsemble> {
    if partition.agents() != x.nrows() {
        return Err(Error::Shape {
            expected: (partition.agents(), x.ncols()),
            got: x.dim(),
        });
    }
    let d = x.ncols();
    let k = partition.clusters();
    let mut centers = Array2::zeros((k, d));
    for (l, members) in partition.index_sets().iter().enumerate() {
        let mut row = centers.row_mut(l);
        for &i in members {
            row += &x.row(i);
        }
        row /= members.len() as f64;
    }
    Ok(ClusterEnsemble {
        centers,
        weights: partition.sizes().into_iter().map(|s| s as f64).collect(),
        total_agents: x.nrows(),
    })
}

/// Center-of-mass drift: row `l` is
/// `(1/N) sum_m N_m phi(|c_l - c_m|) (c_m - c_l)`.
pub fn rhs_clustered(c: &ClusterEnsemble, kernel: &InfluenceKernel) -> Array2<f64> {
    c.interaction(*kernel).drift(c.centers.view())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_heuristic(array![[3.0, 4.0], [0.0, 0.0]].view()), 2.5);
        assert_eq!(epsilon_heuristic(array![[0.0, 0.0]].view()), 0.0);
        let x = array![[1.0, -2.0], [0.5, 3.0], [2.0, 2.0]];
        assert_relative_eq!(
            epsilon_heuristic((&x * 3.5).view()),
            3.5 * epsilon_heuristic(x.view()),
            epsilon = 1e-14
        );
    }

    #[test]
    fn two_separated_groups() {
        let x = array![[0.0, 0.0], [0.1, 0.0], [0.0, 0.1], [10.0, 0.0], [10.1, 0.05]];
        let p = dbscan(x.view(), 1.0, 1).unwrap();
        assert_eq!(p.clusters(), 2);
        assert_eq!(p.labels(), &[0, 0, 0, 1, 1]);
        assert_eq!(p.sizes(), vec![3, 2]);
    }

    #[test]
    fn identical_points_merge_at_zero_eps() {
        let x = array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0]];
        assert_eq!(dbscan(x.view(), 0.0, 1).unwrap().clusters(), 1);
        assert_eq!(dbscan(array![[4.0]].view(), 0.5, 1).unwrap().clusters(), 1);
    }

    #[test]
    fn boundary_distance_is_inclusive() {
        let x = array![[0.0], [1.0]];
        assert_eq!(dbscan(x.view(), 1.0, 1).unwrap().clusters(), 1);
        assert_eq!(dbscan(x.view(), 0.999, 1).unwrap().clusters(), 2);
    }

    #[test]
    fn noise_points_become_singletons() {
        // 0,1,2 dense; 3 is a border point of 2; 4 isolated
        let x = array![[0.0], [0.1], [0.2], [0.9], [5.0]];
        let p = dbscan(x.view(), 0.75, 3).unwrap();
        assert_eq!(p.labels(), &[0, 0, 0, 0, 1]);
        let p = dbscan(x.view(), 0.15, 3).unwrap();
        // only agent 1 is core (neighbors 0 and 2)
        assert_eq!(p.labels(), &[0, 0, 0, 1, 2]);
    }

    #[test]
    fn labels_follow_smallest_member() {
        let x = array![[10.0], [0.0], [10.2], [0.1], [20.0]];
        let p = dbscan(x.view(), 0.5, 1).unwrap();
        assert_eq!(p.labels(), &[0, 1, 0, 1, 2]);
        assert_eq!(p.index_sets()[1], vec![1, 3]);
    }

    #[test]
    fn centers_examples() {
        let x = array![[0.0, 0.0], [2.0, 0.0], [5.0, 5.0]];
        let p = ClusterPartition::from_labels(&[0, 0, 1]);
        let c = cluster_centers(x.view(), &p).unwrap();
        assert_eq!(c.centers, array![[1.0, 0.0], [5.0, 5.0]]);
        assert_eq!(c.weights, vec![2.0, 1.0]);

        let s = cluster_centers(x.view(), &ClusterPartition::singletons(3)).unwrap();
        assert_eq!(s.centers, x);
    }

    #[test]
    fn single_cluster_has_no_drift() {
        let c = ClusterEnsemble {
            centers: array![[1.0, 2.0]],
            weights: vec![7.0],
            total_agents: 7,
        };
        let r = rhs_clustered(&c, &InfluenceKernel::SmoothedGhk { alpha: 1.6 });
        assert!(r.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn equal_weights_reduce_to_agent_model() {
        let kernel = InfluenceKernel::SmoothedGhk { alpha: 1.6 };
        let centers = array![[0.0, 1.0], [1.0, 0.5], [-0.5, 2.0]];
        let c = ClusterEnsemble {
            centers: centers.clone(),
            weights: vec![4.0; 3],
            total_agents: 12,
        };
        let r = rhs_clustered(&c, &kernel);
        let plain = crate::model::rhs_uncontrolled(centers.view(), &kernel);
        for (a, b) in r.iter().zip(plain.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }
}
