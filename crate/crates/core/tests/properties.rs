mod common;

use itertools::Itertools;
use ndarray::Array2;
use proptest::prelude::*;
use xcon::clustering::{kmeans, KMeansParams};
use xcon::contrastive::{unsup_contrastive_loss, Batch};
use xcon::evaluation::hungarian;
use xcon::{clustering_accuracy, FeatureMatrix, SubsetMasks};

fn square(max_n: usize) -> impl Strategy<Value = (usize, Vec<i32>)> {
    (1..=max_n).prop_flat_map(|n| (Just(n), proptest::collection::vec(-100i32..100, n * n)))
}

fn all_unlabeled(n: usize) -> SubsetMasks {
    SubsetMasks {
        all: vec![true; n],
        old: (0..n).map(|i| i % 2 == 0).collect(),
        new: (0..n).map(|i| i % 2 == 1).collect(),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_is_optimal((n, cost) in square(6)) {
        let best: i32 = (0..n)
            .permutations(n)
            .map(|p| p.iter().enumerate().map(|(r, &c)| cost[r * n + c]).sum())
            .min()
            .unwrap();
        let a = hungarian(&cost, n, n).unwrap();
        prop_assert_eq!(a.total, best);
        let cols: Vec<usize> = a.row_to_col.iter().map(|c| c.unwrap()).sorted().collect();
        prop_assert_eq!(cols, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn accuracy_ignores_cluster_names(
        pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60),
        shift in 1usize..5,
    ) {
        let truth: Vec<Option<usize>> = pairs.iter().map(|p| Some(p.1)).collect();
        let pred: Vec<usize> = pairs.iter().map(|p| p.0).collect();
        let renamed: Vec<usize> = pred.iter().map(|&p| (p + shift) % 5 + 10).collect();
        let masks = all_unlabeled(pairs.len());
        let a = clustering_accuracy(&pred, &truth, &masks).unwrap();
        let b = clustering_accuracy(&renamed, &truth, &masks).unwrap();
        prop_assert_eq!(a.matched_all, b.matched_all);
        prop_assert!(a.acc_all >= 1.0 / 5.0 - 1e-12 || pairs.len() < 5);
        prop_assert_eq!(a.matched_all, a.matched_old + a.matched_new);
    }

    #[test]
    fn kmeans_is_deterministic(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let pts = common::gaussian(30, 3, &mut rng);
        let a = kmeans(pts.view(), &KMeansParams::new(4, seed)).unwrap();
        let b = kmeans(pts.view(), &KMeansParams::new(4, seed)).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn normalization_is_idempotent(seed in any::<u64>()) {
        let mut rng = common::rng(seed);
        let once = FeatureMatrix::from_rows(common::gaussian(8, 5, &mut rng)).unwrap().l2_normalize().unwrap();
        let twice = once.clone().l2_normalize().unwrap();
        for (x, y) in once.primary().iter().zip(twice.primary().iter()) {
            prop_assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_invariant_to_row_order_and_rotation(seed in any::<u64>(), angle in 0.0f64..std::f64::consts::TAU) {
        let mut rng = common::rng(seed);
        let a = common::unit_rows(5, 2, &mut rng);
        let q = common::unit_rows(5, 2, &mut rng);
        let base = unsup_contrastive_loss(&Batch::unlabeled(a.clone(), q.clone()).unwrap(), 0.3).unwrap().loss;

        let order = [3usize, 0, 4, 1, 2];
        let pa = a.select(ndarray::Axis(0), &order);
        let pq = q.select(ndarray::Axis(0), &order);
        let permuted = unsup_contrastive_loss(&Batch::unlabeled(pa, pq).unwrap(), 0.3).unwrap().loss;
        prop_assert!((base - permuted).abs() < 1e-10);

        let (s, c) = angle.sin_cos();
        let rot = Array2::from_shape_vec((2, 2), vec![c, -s, s, c]).unwrap();
        let rotated = unsup_contrastive_loss(&Batch::unlabeled(a.dot(&rot), q.dot(&rot)).unwrap(), 0.3).unwrap().loss;
        prop_assert!((base - rotated).abs() < 1e-10);
    }
}
