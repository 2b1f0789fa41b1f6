use abmrc::clustering::{cluster_centers, dbscan, ClusterPartition};
use abmrc::framework::broadcast_controls;
use abmrc::model::{ghk_derivative, ghk_eval, mean_state, rhs_uncontrolled, InfluenceKernel};
use abmrc::numerics::{truncated_svd, RankRule};
use ndarray::Array2;
use proptest::prelude::*;

fn ensemble(max_n: usize, max_d: usize) -> impl Strategy<Value = Array2<f64>> {
    (1..=max_n, 1..=max_d).prop_flat_map(|(n, d)| {
        prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
    })
}

fn kernel() -> impl Strategy<Value = InfluenceKernel> {
    prop_oneof![
        (0.05f64..10.0).prop_map(|alpha| InfluenceKernel::SmoothedGhk { alpha }),
        Just(InfluenceKernel::SmoothedGhk { alpha: 300.0 }),
        (0.1f64..3.0).prop_map(|c| InfluenceKernel::Constant { c }),
    ]
}

/// Union-find over the inclusive eps-graph.
fn components(x: &Array2<f64>, eps: f64) -> Vec<usize> {
    let n = x.nrows();
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(p: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while p[r] != r {
            r = p[r];
        }
        p[i] = r;
        r
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let s2: f64 = (&x.row(i) - &x.row(j)).mapv(|v| v * v).sum();
            if s2.sqrt() <= eps {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    (0..n).map(|i| find(&mut parent, i)).collect()
}

fn same_partition(a: &[usize], b: &[usize]) -> bool {
    (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drift_preserves_the_mean(x in ensemble(12, 5), k in kernel()) {
        let f = rhs_uncontrolled(x.view(), &k);
        let total = f.sum_axis(ndarray::Axis(0));
        let scale = 1.0 + x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        prop_assert!(total.iter().all(|v| v.abs() <= 1e-12 * scale));
    }

    #[test]
    fn drift_commutes_with_agent_permutation(x in ensemble(10, 4), k in kernel(), seed in any::<u64>()) {
        let n = x.nrows();
        let mut order: Vec<usize> = (0..n).collect();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            order.swap(i, (s >> 33) as usize % (i + 1));
        }
        let permuted = x.select(ndarray::Axis(0), &order);
        let a = rhs_uncontrolled(permuted.view(), &k);
        let b = rhs_uncontrolled(x.view(), &k).select(ndarray::Axis(0), &order);
        for (u, v) in a.iter().zip(b.iter()) {
            prop_assert!((u - v).abs() <= 1e-12 * (1.0 + v.abs()));
        }
    }

    #[test]
    fn drift_is_translation_invariant(x in ensemble(8, 3), k in kernel(), shift in -50.0f64..50.0) {
        let a = rhs_uncontrolled(x.view(), &k);
        let b = rhs_uncontrolled((&x + shift).view(), &k);
        for (u, v) in a.iter().zip(b.iter()) {
            prop_assert!((u - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn dbscan_with_one_point_is_connected_components(x in ensemble(25, 3), eps in 0.0f64..4.0) {
        let p = dbscan(x.view(), eps, 1).unwrap();
        prop_assert!(same_partition(p.labels(), &components(&x, eps)));
        // labels are ordered by their smallest member
        let firsts: Vec<usize> = p.index_sets().iter().map(|s| s[0]).collect();
        prop_assert!(firsts.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn dbscan_always_partitions(x in ensemble(20, 2), eps in 0.0f64..3.0, min_pts in 1usize..6) {
        let p = dbscan(x.view(), eps, min_pts).unwrap();
        let mut seen = vec![false; x.nrows()];
        for set in p.index_sets() {
            for &i in set {
                prop_assert!(!seen[i]);
                seen[i] = true;
            }
        }
        prop_assert!(seen.into_iter().all(|s| s));
    }

    #[test]
    fn center_of_mass_is_preserved_by_clustering(x in ensemble(15, 3), eps in 0.0f64..4.0) {
        let p = dbscan(x.view(), eps, 1).unwrap();
        let c = cluster_centers(x.view(), &p).unwrap();
        let weighted = c.weights.iter().zip(c.centers.rows()).fold(
            ndarray::Array1::<f64>::zeros(x.ncols()),
            |acc, (w, row)| acc + &(&row * *w),
        ) / x.nrows() as f64;
        let mean = mean_state(x.view());
        for (a, b) in weighted.iter().zip(mean.iter()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn broadcast_then_average_recovers_cluster_controls(labels in prop::collection::vec(0usize..4, 1..15), d in 1usize..4) {
        let p = ClusterPartition::from_labels(&labels);
        let k = p.clusters();
        let u = Array2::from_shape_fn((k, d), |(l, j)| l as f64 - 0.5 * j as f64);
        let b = broadcast_controls(u.view(), &p).unwrap();
        let back = cluster_centers(b.view(), &p).unwrap();
        prop_assert_eq!(back.centers, u);
    }

    #[test]
    fn svd_factors_are_consistent(m in ensemble(9, 9)) {
        let svd = truncated_svd(m.view(), RankRule::All).unwrap();
        let r = svd.rank();
        prop_assert!(svd.singular_values.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(svd.singular_values.iter().all(|s| *s > 0.0));
        let gram = svd.left.t().dot(&svd.left);
        for ((i, j), v) in gram.indexed_iter() {
            let target = if i == j { 1.0 } else { 0.0 };
            prop_assert!((v - target).abs() <= 1e-10);
        }
        let right = svd.right.unwrap();
        let sigma = Array2::from_diag(&ndarray::Array1::from(svd.singular_values.clone()));
        let rebuilt = svd.left.dot(&sigma).dot(&right.t());
        let scale = 1.0 + svd.singular_values.first().copied().unwrap_or(0.0);
        for (a, b) in rebuilt.iter().zip(m.iter()) {
            prop_assert!((a - b).abs() <= 1e-10 * scale);
        }
        prop_assert!(r <= m.nrows().min(m.ncols()));
    }

    #[test]
    fn ghk_is_a_decreasing_unit_bounded_profile(alpha in 0.01f64..300.0, s in 0.0f64..3.0, ds in 1e-3f64..1.0) {
        let a = ghk_eval(s, alpha).unwrap();
        let b = ghk_eval(s + ds, alpha).unwrap();
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a);
        // strictly positive wherever the value is representable
        if alpha * (s - 1.0) < 700.0 {
            prop_assert!(a > 0.0);
        }
        prop_assert!(ghk_derivative(s, alpha).unwrap() <= 0.0);
    }
}
