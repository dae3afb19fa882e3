//! Brute-force reference implementations used by the integration tests.
//! Nothing here calls into the selection or propagation code under test.

#![allow(dead_code)]

use dynsparse::data::TrainBatch;
use dynsparse::embedding::EmbeddingTable;
use dynsparse::models::Model;
use rand::Rng;

/// Round-half-to-even of `total * (1 - s)`, written out by hand.
pub fn budget_oracle(total: usize, s: f64) -> usize {
    let x = total as f64 * (1.0 - s);
    let f = x.floor();
    let frac = x - f;
    let odd = (f as u64) % 2 == 1;
    if frac > 0.5 || (frac == 0.5 && odd) {
        f as usize + 1
    } else {
        f as usize
    }
}

/// Full sort of every active position by (|w|, index); first k.
pub fn prune_oracle(weights: &[f64], active: &[bool], rho: f64) -> Vec<usize> {
    let n_active = active.iter().filter(|&&a| a).count();
    let k = (rho * n_active as f64).floor() as usize;
    let mut all: Vec<(f64, usize)> = (0..weights.len())
        .filter(|&p| active[p])
        .map(|p| (weights[p].abs(), p))
        .collect();
    all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = all.into_iter().take(k).map(|(_, p)| p).collect();
    out.sort();
    out
}

/// Full sort of every eligible inactive position by (-|g|, index); first k.
pub fn grow_oracle(grad: &[f64], active: &[bool], excluded: &[usize], k: usize) -> Vec<usize> {
    let mut all: Vec<(f64, usize)> = (0..grad.len())
        .filter(|&p| !active[p] && !excluded.contains(&p))
        .map(|p| (grad[p].abs(), p))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = all.into_iter().take(k).map(|(_, p)| p).collect();
    out.sort();
    out
}

/// Full sort of all positions by (-|w|, index); first `budget`.
pub fn omp_oracle(weights: &[f64], s: f64) -> Vec<usize> {
    let keep = budget_oracle(weights.len(), s);
    let mut all: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(p, w)| (w.abs(), p))
        .collect();
    all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
    let mut out: Vec<usize> = all.into_iter().take(keep).map(|(_, p)| p).collect();
    out.sort();
    out
}

/// Values drawn from a small grid so that magnitude ties are common.
pub fn tie_heavy_values<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n)
        .map(|_| {
            let level = rng.random_range(0..6) as f64 * 0.25;
            if rng.random_bool(0.5) {
                level
            } else {
                -level
            }
        })
        .collect()
}

pub fn continuous_values<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

/// Dense `D^-1/2 A D^-1/2` with identity rows for isolated nodes.
pub fn dense_adjacency(
    num_users: usize,
    num_items: usize,
    edges: &[(usize, usize)],
) -> Vec<Vec<f64>> {
    let n = num_users + num_items;
    let mut a = vec![vec![0.0; n]; n];
    for &(u, i) in edges {
        a[u][num_users + i] = 1.0;
        a[num_users + i][u] = 1.0;
    }
    let deg: Vec<f64> = a.iter().map(|row| row.iter().sum()).collect();
    let mut norm = vec![vec![0.0; n]; n];
    for r in 0..n {
        if deg[r] == 0.0 {
            norm[r][r] = 1.0;
            continue;
        }
        for c in 0..n {
            if a[r][c] != 0.0 {
                norm[r][c] = 1.0 / (deg[r] * deg[c]).sqrt();
            }
        }
    }
    norm
}

pub fn matmul(a: &[Vec<f64>], x: &[f64], dim: usize) -> Vec<f64> {
    let n = a.len();
    let mut out = vec![0.0; n * dim];
    for r in 0..n {
        for c in 0..n {
            for d in 0..dim {
                out[r * dim + d] += a[r][c] * x[c * dim + d];
            }
        }
    }
    out
}

/// Mean of `x, A x, ..., A^L x` by dense multiplication.
pub fn propagate_oracle(a: &[Vec<f64>], x: &[f64], dim: usize, layers: usize) -> Vec<f64> {
    let mut acc = x.to_vec();
    let mut cur = x.to_vec();
    for _ in 0..layers {
        cur = matmul(a, &cur, dim);
        for (s, c) in acc.iter_mut().zip(&cur) {
            *s += c;
        }
    }
    acc.iter().map(|v| v / (layers + 1) as f64).collect()
}

/// Random bipartite graph with at most `nodes` nodes.
pub fn random_graph<R: Rng>(rng: &mut R, nodes: usize) -> (usize, usize, Vec<(usize, usize)>) {
    let n = rng.random_range(2..nodes - 1);
    let m = nodes - n;
    let mut edges = Vec::new();
    for u in 0..n {
        for i in 0..m {
            if rng.random_bool(0.3) {
                edges.push((u, i));
            }
        }
    }
    (n, m, edges)
}

pub fn random_batch<R: Rng>(rng: &mut R, n: usize, m: usize, len: usize) -> TrainBatch {
    TrainBatch {
        triples: (0..len)
            .map(|_| {
                let i = rng.random_range(0..m);
                let mut j = rng.random_range(0..m);
                if j == i {
                    j = (j + 1) % m;
                }
                (rng.random_range(0..n), i, j)
            })
            .collect(),
    }
}

/// Worst `|analytic - central difference| / max(1, |analytic|)` over all entries.
pub fn finite_difference_error(
    model: &Model,
    table: &EmbeddingTable,
    batch: &TrainBatch,
    step: f64,
) -> f64 {
    let (_, grad) = model.bpr_loss_and_grad(table, None, batch).unwrap();
    let mut worst: f64 = 0.0;
    let mut probe = table.clone();
    for p in 0..table.len() {
        let orig = probe.weights()[p];
        probe.weights_mut()[p] = orig + step;
        let up = model.bpr_loss(&probe, batch).unwrap();
        probe.weights_mut()[p] = orig - step;
        let down = model.bpr_loss(&probe, batch).unwrap();
        probe.weights_mut()[p] = orig;
        let fd = (up - down) / (2.0 * step);
        let analytic = grad.get(p);
        worst = worst.max((analytic - fd).abs() / analytic.abs().max(1.0));
    }
    worst
}
