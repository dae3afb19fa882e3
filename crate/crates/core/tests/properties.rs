mod common;

use common::budget_oracle;
use dynsparse::data::{sample_batch, split_holdout, InteractionDataset};
use dynsparse::embedding::{
    active_budget, apply_mask, init_mask, masked_step, EmbeddingTable, Gradient, OptimizerState,
    SparseMask,
};
use dynsparse::exploration::{exploration_step, random_prune_once, Decay, ExplorationSchedule};
use dynsparse::models::Model;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_dataset(seed: u64, n: usize, m: usize, density: f64) -> InteractionDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = Vec::new();
    for u in 0..n {
        for i in 0..m {
            if rng.random_bool(density) {
                edges.push((u, i));
            }
        }
        // Every user keeps at least one positive and one negative.
        if !edges.iter().any(|&(v, _)| v == u) {
            edges.push((u, rng.random_range(0..m)));
        }
    }
    InteractionDataset::new(n, m, edges, Vec::new()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn budget_matches_round_half_even(total in 1usize..100_000, s in 0.0f64..1.0) {
        prop_assert_eq!(active_budget(total, s), budget_oracle(total, s));
    }

    #[test]
    fn init_mask_hits_budget(rows in 1usize..200, dim in 1usize..16, s in 0.0f64..1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mask = init_mask((rows, dim), s, &mut rng).unwrap();
        prop_assert_eq!(mask.active_count(), budget_oracle(rows * dim, s));
        prop_assert_eq!(mask.popcount(), mask.active_count());
    }

    #[test]
    fn apply_mask_zeroes_exactly_the_inactive(rows in 1usize..50, dim in 1usize..8, s in 0.0f64..1.0, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut table = EmbeddingTable::random_normal(rows, 0, dim, 1.0, &mut rng);
        let original = table.clone();
        let mask = init_mask((rows, dim), s, &mut rng).unwrap();
        apply_mask(&mut table, &mask).unwrap();
        for p in 0..table.len() {
            if mask.is_active(p) {
                prop_assert_eq!(table.weights()[p], original.weights()[p]);
            } else {
                prop_assert_eq!(table.weights()[p], 0.0);
            }
        }
        let once = table.clone();
        apply_mask(&mut table, &mask).unwrap();
        prop_assert_eq!(table, once);
    }

    #[test]
    fn adam_step_keeps_masked_weights_and_moments_zero(s in 0.0f64..0.95, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (rows, dim) = (20, 4);
        let mut table = EmbeddingTable::random_normal(rows, 0, dim, 1.0, &mut rng);
        let mask = init_mask((rows, dim), s, &mut rng).unwrap();
        apply_mask(&mut table, &mask).unwrap();
        let mut opt = OptimizerState::adam(0.01, rows * dim);
        for _ in 0..3 {
            let values: Vec<f64> = (0..rows * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            let grad = Gradient::from_dense(rows, dim, values);
            masked_step(&mut table, &grad, &mask, &mut opt).unwrap();
        }
        let (m1, m2) = opt.moments();
        for p in mask.inactive_positions() {
            prop_assert_eq!(table.weights()[p], 0.0);
            prop_assert_eq!(m1[p], 0.0);
            prop_assert_eq!(m2[p], 0.0);
        }
    }

    #[test]
    fn exploration_preserves_budget_and_disjointness(s in 0.05f64..0.95, rho0 in 0.0f64..1.0, seed: u64) {
        let ds = random_dataset(seed, 8, 10, 0.3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dim = 4;
        let mut table = EmbeddingTable::random_normal(8, 10, dim, 0.1, &mut rng);
        let mut mask = random_prune_once(&mut table, s, &mut rng).unwrap();
        let before = mask.active_count();
        let mut opt = OptimizerState::adam(0.01, table.len());
        let sched = ExplorationSchedule::new(rho0, 5, 100, Decay::Cosine).unwrap();
        let model = Model::mf(0.0);
        let batch = sample_batch(&ds, 16, &mut rng).unwrap();
        let event = exploration_step(&mut table, &mut mask, &mut opt, &sched, 5, |t| {
            model.bpr_loss_and_grad(t, None, &batch).map(|(_, g)| g)
        })
        .unwrap();
        prop_assert_eq!(mask.active_count(), before);
        prop_assert_eq!(mask.popcount(), before);
        prop_assert_eq!(event.pruned.len(), event.grown.len());
        prop_assert!(event.pruned.iter().all(|p| event.grown.binary_search(p).is_err()));
        for p in mask.inactive_positions() {
            prop_assert_eq!(table.weights()[p], 0.0);
        }
        for &p in &event.grown {
            prop_assert_eq!(table.weights()[p], 0.0);
            prop_assert!(mask.is_active(p));
        }
    }

    #[test]
    fn schedule_is_nonincreasing(rho0 in 0.0f64..1.0, t_end in 1usize..5000, linear: bool) {
        let decay = if linear { Decay::Linear } else { Decay::Cosine };
        let sched = ExplorationSchedule::new(rho0, 1, t_end, decay).unwrap();
        let mut prev = f64::INFINITY;
        let step = (t_end / 97).max(1);
        for t in (0..=t_end).step_by(step) {
            let r = sched.update_ratio(t).unwrap();
            prop_assert!(r <= prev + 1e-15);
            prop_assert!((0.0..=rho0 + 1e-15).contains(&r));
            prev = r;
        }
    }

    #[test]
    fn holdout_keeps_splits_disjoint(seed: u64, ratio in 0.0f64..1.0) {
        let ds = random_dataset(seed, 12, 15, 0.4);
        let split = split_holdout(&ds, ratio, seed).unwrap();
        prop_assert_eq!(split.train_edges().len() + split.test_edges().len(), ds.train_edges().len());
        for &(u, i) in split.test_edges() {
            prop_assert!(!split.is_train_edge(u, i));
        }
        for u in 0..12 {
            let deg = ds.user_train_items(u).len();
            if deg >= 1 {
                prop_assert!(!split.user_train_items(u).is_empty());
            }
            let expected = ((ratio * deg as f64).ceil() as usize).min(deg.saturating_sub(1));
            prop_assert_eq!(split.user_test_items(u).len(), expected);
        }
    }
}

#[test]
fn sampled_negatives_are_always_valid() {
    let ds = random_dataset(5, 30, 25, 0.5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut seen = 0;
    while seen < 100_000 {
        let batch = sample_batch(&ds, 1000, &mut rng).unwrap();
        for &(u, i, j) in &batch.triples {
            assert!(ds.is_train_edge(u, i));
            assert!(!ds.is_train_edge(u, j));
        }
        seen += batch.len();
    }
}

#[test]
fn different_seeds_give_different_masks() {
    // Two independent uniform masks at s=0.5 over 8000 positions overlap on
    // about half of their active bits; identical masks would overlap on all.
    let shape = (1000, 8);
    let a = init_mask(shape, 0.5, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = init_mask(shape, 0.5, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    let overlap = a.active_positions().filter(|&p| b.is_active(p)).count() as f64;
    let expected = 4000.0 * 0.5;
    let sd = (4000.0f64 * 0.5 * 0.5).sqrt();
    assert!((overlap - expected).abs() < 5.0 * sd, "overlap {overlap}");
    assert_ne!(a, b);
}

#[test]
fn masks_are_reproducible_per_seed() {
    let a = SparseMask::random((300, 7), 0.8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = SparseMask::random((300, 7), 0.8, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
}
