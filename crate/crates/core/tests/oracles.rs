mod common;

use common::*;
use dynsparse::embedding::{EmbeddingTable, Gradient, SparseMask};
use dynsparse::exploration::{one_shot_magnitude_prune, select_grow, select_prune};
use dynsparse::models::{lightgcn_propagate, Model, NormalizedAdjacency};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mask(rng: &mut ChaCha8Rng, len: usize) -> Vec<bool> {
    let density = rng.random_range(0.05..0.95);
    (0..len).map(|_| rng.random_bool(density)).collect()
}

fn to_mask(rows: usize, dim: usize, active: &[bool]) -> SparseMask {
    let count = active.iter().filter(|&&a| a).count();
    let s = 1.0 - count as f64 / active.len() as f64;
    SparseMask::from_positions((rows, dim), s, (0..active.len()).filter(|&p| active[p]))
}

#[test]
fn selection_matches_full_sort_on_random_tables() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for trial in 0..300 {
        let rows = rng.random_range(2..60);
        let dim = rng.random_range(1..17);
        let len = rows * dim;
        let values = if trial % 2 == 0 {
            tie_heavy_values(len, &mut rng)
        } else {
            continuous_values(len, &mut rng)
        };
        let table = EmbeddingTable::from_weights(rows - 1, 1, dim, values.clone()).unwrap();
        let active = random_mask(&mut rng, len);
        let mask = to_mask(rows, dim, &active);
        let rho = rng.random_range(0.0..1.0);

        let pruned = select_prune(&table, &mask, rho);
        assert_eq!(
            pruned,
            prune_oracle(&values, &active, rho),
            "prune trial {trial}"
        );

        let grad_values = if trial % 3 == 0 {
            tie_heavy_values(len, &mut rng)
        } else {
            continuous_values(len, &mut rng)
        };
        let grad = Gradient::from_dense(rows, dim, grad_values.clone());
        let eligible = active.iter().filter(|&&a| !a).count();
        let k = rng.random_range(0..=eligible);
        let grown = select_grow(&grad, &mask, k, &[]).unwrap();
        assert_eq!(
            grown,
            grow_oracle(&grad_values, &active, &[], k),
            "grow trial {trial}"
        );

        let s = rng.random_range(0.0..1.0);
        let omp = one_shot_magnitude_prune(&table, s).unwrap();
        let got: Vec<usize> = omp.active_positions().collect();
        assert_eq!(got, omp_oracle(&values, s), "omp trial {trial}");
    }
}

#[test]
fn grow_respects_exclusions_like_the_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..100 {
        let rows = rng.random_range(2..30);
        let dim = rng.random_range(1..9);
        let len = rows * dim;
        let active = random_mask(&mut rng, len);
        let mask = to_mask(rows, dim, &active);
        let inactive: Vec<usize> = (0..len).filter(|&p| !active[p]).collect();
        let mut excluded: Vec<usize> = inactive
            .iter()
            .copied()
            .filter(|_| rng.random_bool(0.3))
            .collect();
        excluded.sort();
        let grad_values = tie_heavy_values(len, &mut rng);
        let grad = Gradient::from_dense(rows, dim, grad_values.clone());
        let k = rng.random_range(0..=inactive.len() - excluded.len());
        let grown = select_grow(&grad, &mask, k, &excluded).unwrap();
        assert_eq!(grown, grow_oracle(&grad_values, &active, &excluded, k));
    }
}

#[test]
fn all_ties_resolve_to_lowest_indices() {
    let table = EmbeddingTable::from_weights(3, 1, 2, vec![0.5; 8]).unwrap();
    let mask = SparseMask::all_active(4, 2);
    assert_eq!(select_prune(&table, &mask, 0.5), vec![0, 1, 2, 3]);
    let omp = one_shot_magnitude_prune(&table, 0.25).unwrap();
    assert_eq!(
        omp.active_positions().collect::<Vec<_>>(),
        vec![0, 1, 2, 3, 4, 5]
    );
}

#[test]
fn mf_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let (n, m, _) = random_graph(&mut rng, 20);
        let dim = rng.random_range(1..9);
        let table = EmbeddingTable::random_normal(n, m, dim, 0.5, &mut rng);
        let len = rng.random_range(1..12);
        let batch = random_batch(&mut rng, n, m, len);
        let reg = if rng.random_bool(0.5) { 0.0 } else { 0.05 };
        let err = finite_difference_error(&Model::mf(reg), &table, &batch, 1e-5);
        assert!(err < 1e-4, "relative error {err}");
    }
}

#[test]
fn lightgcn_gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for trial in 0..30 {
        let layers = 1 + trial % 3;
        let (n, m, edges) = random_graph(&mut rng, 20);
        let dim = rng.random_range(1..9);
        let adj = NormalizedAdjacency::from_edges(n, m, &edges);
        let table = EmbeddingTable::random_normal(n, m, dim, 0.5, &mut rng);
        let len = rng.random_range(1..12);
        let batch = random_batch(&mut rng, n, m, len);
        let reg = if rng.random_bool(0.5) { 0.0 } else { 0.05 };
        let err = finite_difference_error(&Model::lightgcn(adj, layers, reg), &table, &batch, 1e-5);
        assert!(err < 1e-4, "L={layers} relative error {err}");
    }
}

#[test]
fn propagation_matches_dense_matmul() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    for layers in 0..4 {
        for _ in 0..10 {
            let (n, m, edges) = random_graph(&mut rng, 20);
            let dim = rng.random_range(1..6);
            let adj = NormalizedAdjacency::from_edges(n, m, &edges);
            let x = continuous_values((n + m) * dim, &mut rng);
            let got = lightgcn_propagate(&adj, layers, &x, dim);
            let want = propagate_oracle(&dense_adjacency(n, m, &edges), &x, dim, layers);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "L={layers}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn propagation_is_linear() {
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let (n, m, edges) = random_graph(&mut rng, 20);
    let dim = 4;
    let adj = NormalizedAdjacency::from_edges(n, m, &edges);
    let x = continuous_values((n + m) * dim, &mut rng);
    let y = continuous_values((n + m) * dim, &mut rng);
    let (a, b) = (1.7, -0.3);
    let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
    let lhs = lightgcn_propagate(&adj, 3, &combo, dim);
    let px = lightgcn_propagate(&adj, 3, &x, dim);
    let py = lightgcn_propagate(&adj, 3, &y, dim);
    for i in 0..lhs.len() {
        assert!((lhs[i] - (a * px[i] + b * py[i])).abs() < 1e-10);
    }
}

#[test]
fn bpr_loss_depends_only_on_score_differences() {
    // Adding the same vector to every item embedding shifts s(u,i) and s(u,j)
    // by the same amount, so the unregularized loss is unchanged.
    let mut rng = ChaCha8Rng::seed_from_u64(41);
    let (n, m, dim) = (5, 7, 3);
    let table = EmbeddingTable::random_normal(n, m, dim, 0.5, &mut rng);
    let batch = random_batch(&mut rng, n, m, 10);
    let model = Model::mf(0.0);
    let base = model.bpr_loss(&table, &batch).unwrap();
    let shift = continuous_values(dim, &mut rng);
    let mut shifted = table.clone();
    for i in 0..m {
        let r = shifted.item_row_index(i);
        for (w, s) in shifted.row_mut(r).iter_mut().zip(&shift) {
            *w += s;
        }
    }
    let moved = model.bpr_loss(&shifted, &batch).unwrap();
    assert!((base - moved).abs() < 1e-12, "{base} vs {moved}");
}
