mod common;

use proptest::prelude::*;

use tops_core::dataset::split_rows;
use tops_core::growth::{self, GrowConfig};
use tops_core::harness::{gain, t_test};
use tops_core::learners::instantiation_set;
use tops_core::losses::{loss_of, LossKind};
use tops_core::weights::{fit_simplex_least_squares, squared_error};
use tops_core::{synthetic, Limits};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn additive_losses_split_by_size(
        parts in prop::collection::vec((0.0f64..1.0, 0u8..2), 2..60),
        cut in 1usize..59,
    ) {
        let cut = cut.min(parts.len() - 1);
        let scores: Vec<f64> = parts.iter().map(|p| p.0).collect();
        let labels: Vec<f64> = parts.iter().map(|p| p.1 as f64).collect();
        for kind in [LossKind::Mae, LossKind::Mse, LossKind::ErrorRate] {
            let whole = loss_of(kind, &scores, &labels).unwrap();
            let a = loss_of(kind, &scores[..cut], &labels[..cut]).unwrap();
            let b = loss_of(kind, &scores[cut..], &labels[cut..]).unwrap();
            let n = scores.len() as f64;
            let mixed = (cut as f64 * a + (n - cut as f64) * b) / n;
            prop_assert!((whole - mixed).abs() < 1e-12);
        }
    }

    #[test]
    fn partitions_are_disjoint_and_exhaustive(
        n in 3usize..400,
        s in 0.2f64..0.8,
        v in 0.05f64..0.5,
        seed in any::<u64>(),
    ) {
        let v2 = 1.0 - s - v;
        prop_assume!(v2 > 0.01);
        let rows: Vec<usize> = (0..n).collect();
        let p = split_rows(&rows, (s, v, v2), seed).unwrap();
        let mut all: Vec<usize> = p.s_idx.iter().chain(&p.v1_idx).chain(&p.v2_idx).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, rows);
    }

    #[test]
    fn gain_sign_follows_loss_order(a in 0.0f64..2.0, b in 1e-6f64..2.0) {
        let g = gain(a, b).unwrap();
        prop_assert_eq!(g > 0.0, a < b);
    }

    #[test]
    fn t_test_is_symmetric_and_matches_integration(
        a in prop::collection::vec(-5.0f64..5.0, 2..12),
        b in prop::collection::vec(-5.0f64..5.0, 2..12),
    ) {
        let p = t_test(&a, &b).unwrap();
        prop_assert_eq!(p, t_test(&b, &a).unwrap());
        let (t, df) = common::pooled_t(&a, &b);
        prop_assume!(t.is_finite());
        prop_assert!((p - common::t_two_sided_p(t, df)).abs() < 1e-6);
    }

    #[test]
    fn weights_never_lose_to_a_single_node(
        k in 1usize..6,
        n in 1usize..40,
        seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let cols: Vec<Vec<f64>> = (0..k).map(|_| (0..n).map(|_| rng.random_range(-1.0..2.0)).collect()).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
        let w = fit_simplex_least_squares(&cols, &y, 1000, 1e-8);
        prop_assert!(w.iter().all(|&x| x >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        let fitted = squared_error(&cols, &w, &y);
        for j in 0..k {
            let mut e = vec![0.0; k];
            e[j] = 1.0;
            prop_assert!(fitted <= squared_error(&cols, &e, &y) + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn grown_trees_satisfy_structure(
        n in 80usize..400,
        d in 1usize..5,
        seed in any::<u64>(),
        probe_seed in any::<u64>(),
    ) {
        use rand::{Rng, SeedableRng};
        let data = synthetic::random_regression(n, d, seed);
        let p = split_rows(&data.all_rows(), (0.75, 0.15, 0.10), seed).unwrap();
        let algs = instantiation_set("tops_lr").unwrap();
        let cfg = GrowConfig { limits: Limits::default(), seed, ..GrowConfig::default() };
        let g = growth::grow(&data, &p.s_idx, &p.v1_idx, &algs, LossKind::Mse.into(), cfg).unwrap();
        let tree = &g.tree;
        prop_assert!(tree.validate().is_ok());
        for node in &tree.nodes {
            prop_assert!(node.candidates_evaluated <= node.n_train * d);
            if let Some(c) = node.predictor.trained_on {
                prop_assert!(node.cell.is_subset_of(&tree.node(c).cell));
            }
        }
        for ev in &g.report.trajectory {
            prop_assert!(ev.global_after < ev.global_before);
            prop_assert!(ev.joint_loss < ev.node_loss - 1e-9);
        }
        prop_assert!(g.report.final_v1_loss <= g.report.root_v1_loss);
        // random points plus every split threshold land in exactly one terminal
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(probe_seed);
        let mut probes: Vec<Vec<f64>> = (0..500).map(|_| (0..d).map(|_| rng.random()).collect()).collect();
        for node in &tree.nodes {
            if let Some(s) = node.split {
                let mut x: Vec<f64> = (0..d).map(|_| rng.random()).collect();
                x[s.feature] = s.threshold;
                probes.push(x);
            }
        }
        for x in &probes {
            let hits = tree.terminals.iter().filter(|&&t| tree.node(t).cell.contains(x)).count();
            prop_assert_eq!(hits, 1);
            prop_assert!(tree.node(tree.terminal_of(x)).cell.contains(x));
        }
    }
}
