//! Scoring backbones: matrix factorization and LightGCN-style propagation,
//! both trained with a pairwise BPR loss and an analytic gradient.

use std::borrow::Cow;

use serde::{Deserialize, Serialize};

use crate::data::{InteractionDataset, TrainBatch};
use crate::embedding::{EmbeddingTable, Gradient, SparseMask};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackboneKind {
    Mf,
    LightGcn,
}

impl std::str::FromStr for BackboneKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "mf" => Ok(BackboneKind::Mf),
            "lightgcn" => Ok(BackboneKind::LightGcn),
            other => Err(format!(
                "unknown backbone `{other}` (expected mf or lightgcn)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub kind: BackboneKind,
    /// Propagation depth; ignored for MF.
    pub layers: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            kind: BackboneKind::Mf,
            layers: 3,
        }
    }
}

/// Symmetric-normalized bipartite adjacency `D^-1/2 A D^-1/2` in CSR form over
/// all `N + M` nodes. Isolated nodes act as identity rows, so their embedding
/// passes through every layer unchanged.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizedAdjacency {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
    weights: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn from_edges(num_users: usize, num_items: usize, edges: &[(usize, usize)]) -> Self {
        let nodes = num_users + num_items;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for &(u, i) in edges {
            adj[u].push(num_users + i);
            adj[num_users + i].push(u);
        }
        let degree: Vec<f64> = adj.iter().map(|n| n.len() as f64).collect();
        let mut offsets = Vec::with_capacity(nodes + 1);
        let mut neighbors = Vec::with_capacity(2 * edges.len());
        let mut weights = Vec::with_capacity(2 * edges.len());
        offsets.push(0);
        for (r, nbrs) in adj.iter_mut().enumerate() {
            nbrs.sort_unstable();
            for &c in nbrs.iter() {
                neighbors.push(c);
                weights.push(1.0 / (degree[r] * degree[c]).sqrt());
            }
            offsets.push(neighbors.len());
        }
        Self {
            offsets,
            neighbors,
            weights,
        }
    }

    pub fn from_dataset(ds: &InteractionDataset) -> Self {
        Self::from_edges(ds.num_users(), ds.num_items(), ds.train_edges())
    }

    pub fn nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Stored nonzeros (each undirected edge counted twice; identity rows of
    /// isolated nodes excluded).
    pub fn nnz(&self) -> usize {
        self.neighbors.len()
    }

    /// `out = A_hat * input` for row-major `nodes x dim` matrices.
    pub fn multiply(&self, input: &[f64], dim: usize, out: &mut [f64]) {
        for r in 0..self.nodes() {
            let dst = &mut out[r * dim..(r + 1) * dim];
            if self.offsets[r] == self.offsets[r + 1] {
                dst.copy_from_slice(&input[r * dim..(r + 1) * dim]);
                continue;
            }
            dst.fill(0.0);
            for e in self.offsets[r]..self.offsets[r + 1] {
                let w = self.weights[e];
                let src = &input[self.neighbors[e] * dim..(self.neighbors[e] + 1) * dim];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += w * s;
                }
            }
        }
    }

    /// Dense copy, for tests on small graphs.
    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        let n = self.nodes();
        let mut dense = vec![vec![0.0; n]; n];
        for (r, row) in dense.iter_mut().enumerate() {
            if self.offsets[r] == self.offsets[r + 1] {
                row[r] = 1.0;
            }
            for e in self.offsets[r]..self.offsets[r + 1] {
                row[self.neighbors[e]] = self.weights[e];
            }
        }
        dense
    }
}

/// Mean of `E, A E, ..., A^L E`.
pub fn lightgcn_propagate(
    adj: &NormalizedAdjacency,
    layers: usize,
    input: &[f64],
    dim: usize,
) -> Vec<f64> {
    let mut acc = input.to_vec();
    if layers == 0 {
        return acc;
    }
    let mut cur = input.to_vec();
    let mut next = vec![0.0; input.len()];
    for _ in 0..layers {
        adj.multiply(&cur, dim, &mut next);
        std::mem::swap(&mut cur, &mut next);
        for (a, c) in acc.iter_mut().zip(&cur) {
            *a += c;
        }
    }
    let scale = 1.0 / (layers + 1) as f64;
    acc.iter_mut().for_each(|a| *a *= scale);
    acc
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `-ln(sigmoid(x))` without overflow.
#[inline]
fn neg_log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A backbone bound to its graph, ready for scoring and training.
#[derive(Debug, Clone)]
pub struct Model {
    config: BackboneConfig,
    adjacency: Option<NormalizedAdjacency>,
    /// L2 coefficient on the layer-0 embeddings touched by a batch.
    reg: f64,
}

impl Model {
    pub fn new(config: BackboneConfig, ds: &InteractionDataset, reg: f64) -> Self {
        let adjacency = match config.kind {
            BackboneKind::Mf => None,
            BackboneKind::LightGcn => Some(NormalizedAdjacency::from_dataset(ds)),
        };
        Self {
            config,
            adjacency,
            reg,
        }
    }

    pub fn mf(reg: f64) -> Self {
        Self {
            config: BackboneConfig {
                kind: BackboneKind::Mf,
                layers: 0,
            },
            adjacency: None,
            reg,
        }
    }

    pub fn lightgcn(adjacency: NormalizedAdjacency, layers: usize, reg: f64) -> Self {
        Self {
            config: BackboneConfig {
                kind: BackboneKind::LightGcn,
                layers,
            },
            adjacency: Some(adjacency),
            reg,
        }
    }

    pub fn config(&self) -> BackboneConfig {
        self.config
    }

    pub fn adjacency(&self) -> Option<&NormalizedAdjacency> {
        self.adjacency.as_ref()
    }

    pub fn reg(&self) -> f64 {
        self.reg
    }

    fn propagation(&self) -> Option<(&NormalizedAdjacency, usize)> {
        match self.config.kind {
            BackboneKind::Mf => None,
            BackboneKind::LightGcn => self.adjacency.as_ref().map(|a| (a, self.config.layers)),
        }
    }

    /// Final (post-propagation) embeddings, row-major like the table.
    pub fn forward<'a>(&self, table: &'a EmbeddingTable) -> Cow<'a, [f64]> {
        match self.propagation() {
            None => Cow::Borrowed(table.weights()),
            Some((adj, layers)) => Cow::Owned(lightgcn_propagate(
                adj,
                layers,
                table.weights(),
                table.dim(),
            )),
        }
    }

    /// Propagated copy of `table`; identity for MF.
    pub fn propagate(&self, table: &EmbeddingTable) -> EmbeddingTable {
        let out = self.forward(table).into_owned();
        EmbeddingTable::from_weights(table.num_users(), table.num_items(), table.dim(), out)
            .expect("propagation preserves shape")
    }

    pub fn score(&self, table: &EmbeddingTable, u: usize, i: usize) -> f64 {
        match self.propagation() {
            None => dot(table.user(u), table.item(i)),
            Some(_) => {
                let p = self.propagate(table);
                dot(p.user(u), p.item(i))
            }
        }
    }

    /// Mean BPR loss over the batch plus `reg / 2B * sum(|e_u|^2 + |e_i|^2 + |e_j|^2)`
    /// on layer-0 embeddings, together with its dense gradient.
    ///
    /// With a mask, the forward pass runs on the masked table; the returned
    /// gradient still covers every position. `grad` is cleared first.
    pub fn loss_and_grad(
        &self,
        table: &EmbeddingTable,
        mask: Option<&SparseMask>,
        batch: &TrainBatch,
        grad: &mut Gradient,
    ) -> Result<f64> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if grad.shape() != table.shape() {
            return Err(Error::ShapeMismatch {
                expected: table.shape(),
                found: grad.shape(),
            });
        }
        let effective: Cow<'_, EmbeddingTable> = match mask {
            Some(m) if needs_masking(table, m) => {
                let mut t = table.clone();
                crate::embedding::apply_mask(&mut t, m)?;
                Cow::Owned(t)
            }
            _ => Cow::Borrowed(table),
        };
        let table = effective.as_ref();
        grad.clear();

        let n = table.num_users();
        let dim = table.dim();
        let scale = 1.0 / batch.len() as f64;
        let finals = self.forward(table);
        let row = |r: usize| &finals[r * dim..(r + 1) * dim];

        // Gradient w.r.t. final embeddings; equals the table gradient for MF.
        let mut out_grad = self.propagation().map(|_| Gradient::for_table(table));
        let mut loss = 0.0;
        for &(u, i, j) in &batch.triples {
            let (ru, ri, rj) = (u, n + i, n + j);
            let x = dot(row(ru), row(ri)) - dot(row(ru), row(rj));
            let term = neg_log_sigmoid(x);
            if !term.is_finite() {
                return Err(Error::NonFiniteLoss {
                    user: u,
                    pos: i,
                    neg: j,
                    value: term,
                });
            }
            loss += term * scale;
            // d(-ln sigmoid(x))/dx = -sigmoid(-x)
            let c = -sigmoid(-x) * scale;
            let target = out_grad.as_mut().unwrap_or(&mut *grad);
            let (eu, ei, ej) = (row(ru), row(ri), row(rj));
            for ((g, a), b) in target.row_mut(ru).iter_mut().zip(ei).zip(ej) {
                *g += c * (a - b);
            }
            for (g, e) in target.row_mut(ri).iter_mut().zip(eu) {
                *g += c * e;
            }
            for (g, e) in target.row_mut(rj).iter_mut().zip(eu) {
                *g -= c * e;
            }
        }

        if let (Some(og), Some((adj, layers))) = (out_grad, self.propagation()) {
            // A_hat is symmetric, so the backward pass is the same propagation.
            let back = lightgcn_propagate(adj, layers, og.values(), dim);
            for r in 0..table.rows() {
                grad.row_mut(r)
                    .copy_from_slice(&back[r * dim..(r + 1) * dim]);
            }
        }

        if self.reg > 0.0 {
            let coef = self.reg * scale;
            for &(u, i, j) in &batch.triples {
                for r in [u, n + i, n + j] {
                    let e = table.row(r);
                    loss += 0.5 * coef * dot(e, e);
                    for (g, w) in grad.row_mut(r).iter_mut().zip(e) {
                        *g += coef * w;
                    }
                }
            }
        }
        if !loss.is_finite() {
            let &(u, i, j) = batch.triples.first().expect("batch is nonempty");
            return Err(Error::NonFiniteLoss {
                user: u,
                pos: i,
                neg: j,
                value: loss,
            });
        }
        Ok(loss)
    }

    /// Convenience wrapper returning a fresh gradient.
    pub fn bpr_loss_and_grad(
        &self,
        table: &EmbeddingTable,
        mask: Option<&SparseMask>,
        batch: &TrainBatch,
    ) -> Result<(f64, Gradient)> {
        let mut grad = Gradient::for_table(table);
        let loss = self.loss_and_grad(table, mask, batch, &mut grad)?;
        Ok((loss, grad))
    }

    /// Loss only; used by finite-difference checks.
    pub fn bpr_loss(&self, table: &EmbeddingTable, batch: &TrainBatch) -> Result<f64> {
        self.bpr_loss_and_grad(table, None, batch).map(|(l, _)| l)
    }
}

fn needs_masking(table: &EmbeddingTable, mask: &SparseMask) -> bool {
    table
        .weights()
        .chunks(64)
        .zip(mask.words())
        .any(|(chunk, &word)| {
            let nonzero = chunk
                .iter()
                .enumerate()
                .fold(0u64, |acc, (b, &w)| acc | (u64::from(w != 0.0) << b));
            nonzero & !word != 0
        })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::apply_mask;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn pair_table(eu: [f64; 2], ei: [f64; 2], ej: [f64; 2]) -> EmbeddingTable {
        let mut w = eu.to_vec();
        w.extend(ei);
        w.extend(ej);
        EmbeddingTable::from_weights(1, 2, 2, w).unwrap()
    }

    fn one_triple() -> TrainBatch {
        TrainBatch {
            triples: vec![(0, 0, 1)],
        }
    }

    #[test]
    fn mf_scores_are_dot_products() {
        let t = pair_table([1.0, 0.0], [1.0, 0.0], [0.0, 0.0]);
        let m = Model::mf(0.0);
        assert_eq!(m.score(&t, 0, 0), 1.0);
        assert_eq!(m.score(&t, 0, 1), 0.0);
    }

    #[test]
    fn lightgcn_without_layers_scores_like_mf() {
        let t = pair_table([0.3, -1.2], [0.7, 0.5], [0.1, 0.0]);
        let adj = NormalizedAdjacency::from_edges(1, 2, &[(0, 0)]);
        let g = Model::lightgcn(adj, 0, 0.0);
        assert_eq!(g.score(&t, 0, 0), Model::mf(0.0).score(&t, 0, 0));
    }

    #[test]
    fn single_edge_propagation() {
        let adj = NormalizedAdjacency::from_edges(1, 1, &[(0, 0)]);
        let input = vec![1.0, 0.0, 0.0, 1.0];
        let mut layer1 = vec![0.0; 4];
        adj.multiply(&input, 2, &mut layer1);
        assert_eq!(&layer1[..2], &[0.0, 1.0]);
        let combined = lightgcn_propagate(&adj, 1, &input, 2);
        assert_eq!(&combined[..2], &[0.5, 0.5]);
    }

    #[test]
    fn empty_graph_propagation_is_identity() {
        let adj = NormalizedAdjacency::from_edges(2, 3, &[]);
        let input: Vec<f64> = (0..15).map(|x| x as f64 * 0.1).collect();
        for layers in 0..4 {
            let out = lightgcn_propagate(&adj, layers, &input, 3);
            for (a, b) in out.iter().zip(&input) {
                assert!((a - b).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn isolated_node_keeps_layer_zero() {
        // user 1 has no edges
        let adj = NormalizedAdjacency::from_edges(2, 1, &[(0, 0)]);
        let input = vec![1.0, 2.0, 3.0];
        let out = lightgcn_propagate(&adj, 2, &input, 1);
        assert_eq!(out[1], 2.0);
    }

    #[test]
    fn zero_embeddings_give_ln2() {
        let t = EmbeddingTable::zeros(1, 2, 3);
        let (loss, _) = Model::mf(0.0)
            .bpr_loss_and_grad(&t, None, &one_triple())
            .unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn closed_form_loss() {
        let t = pair_table([1.0, 0.0], [1.0, 0.0], [0.0, 0.0]);
        let (loss, _) = Model::mf(0.0)
            .bpr_loss_and_grad(&t, None, &one_triple())
            .unwrap();
        assert!((loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.3133).abs() < 1e-4);
    }

    #[test]
    fn stable_for_extreme_scores() {
        let t = pair_table([1e3, 0.0], [-1e3, 0.0], [1e3, 0.0]);
        let (loss, grad) = Model::mf(0.0)
            .bpr_loss_and_grad(&t, None, &one_triple())
            .unwrap();
        assert!((loss - 2e6).abs() / 2e6 < 1e-12);
        assert!(grad.values().iter().all(|g| g.is_finite()));
    }

    #[test]
    fn masked_forward_matches_applied_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let t = EmbeddingTable::random_normal(3, 4, 4, 1.0, &mut rng);
        let mask = crate::embedding::init_mask(t.shape(), 0.5, &mut rng).unwrap();
        let mut applied = t.clone();
        apply_mask(&mut applied, &mask).unwrap();
        let edges = [(0, 0), (0, 2), (1, 1), (2, 3)];
        let batch = TrainBatch {
            triples: vec![(0, 0, 1), (1, 1, 3), (2, 3, 0)],
        };
        for model in [
            Model::mf(1e-2),
            Model::lightgcn(NormalizedAdjacency::from_edges(3, 4, &edges), 2, 1e-2),
        ] {
            let (la, ga) = model.bpr_loss_and_grad(&t, Some(&mask), &batch).unwrap();
            let (lb, gb) = model.bpr_loss_and_grad(&applied, None, &batch).unwrap();
            assert_eq!(la, lb);
            assert_eq!(ga.values(), gb.values());
        }
    }

    #[test]
    fn empty_batch_is_rejected() {
        let t = EmbeddingTable::zeros(1, 2, 2);
        let batch = TrainBatch { triples: vec![] };
        assert!(matches!(
            Model::mf(0.0).bpr_loss_and_grad(&t, None, &batch),
            Err(Error::EmptyBatch)
        ));
    }
}
