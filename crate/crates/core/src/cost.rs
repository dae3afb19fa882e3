//! Model-derived MAC and memory accounting.
//!
//! Counts follow the embedding-centric complexity model: LightGCN inference is
//! `(nnz(A) * L + N * M) * d`, MF inference is `N * M * d`, and a sparse table
//! scales either by `(1 - s)`. For training, one iteration costs a forward pass
//! over the batch plus a backward pass counted as twice the forward cost.
//! Exploration iterations run one dense forward and backward pass instead.

use serde::{Deserialize, Serialize};

use crate::models::BackboneKind;

/// Backward-pass cost as a multiple of the forward pass.
pub const BACKWARD_FACTOR: f64 = 2.0;

/// Bytes per stored weight (`f64`).
pub const BYTES_PER_WEIGHT: usize = std::mem::size_of::<f64>();

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub macs_train: f64,
    pub macs_infer: f64,
    pub memory_bytes: usize,
}

/// MACs of one full-catalog inference pass.
pub fn macs_inference(
    kind: BackboneKind,
    num_users: usize,
    num_items: usize,
    dim: usize,
    layers: usize,
    nnz_adj: usize,
    s: f64,
) -> f64 {
    let similarity = num_users as f64 * num_items as f64;
    let per_dim = match kind {
        BackboneKind::Mf => similarity,
        BackboneKind::LightGcn => nnz_adj as f64 * layers as f64 + similarity,
    };
    per_dim * dim as f64 * (1.0 - s)
}

/// Dense forward MACs of one training iteration: graph propagation (LightGCN
/// only) plus two scores per triple.
pub fn forward_macs_per_iteration(
    kind: BackboneKind,
    batch_size: usize,
    dim: usize,
    layers: usize,
    nnz_adj: usize,
) -> f64 {
    let scoring = 2.0 * batch_size as f64 * dim as f64;
    match kind {
        BackboneKind::Mf => scoring,
        BackboneKind::LightGcn => nnz_adj as f64 * layers as f64 * dim as f64 + scoring,
    }
}

/// Cumulative training MACs: `sparse_iterations` masked steps plus
/// `dense_iterations` dense gradient evaluations (exploration).
pub fn macs_training(
    forward_per_iteration: f64,
    sparse_iterations: usize,
    dense_iterations: usize,
    s: f64,
) -> f64 {
    let per_iter = forward_per_iteration * (1.0 + BACKWARD_FACTOR);
    per_iter * (1.0 - s) * sparse_iterations as f64 + per_iter * dense_iterations as f64
}

/// Active weights plus the packed mask (omitted for dense tables).
pub fn memory_bytes(active_count: usize, total: usize, with_mask: bool) -> usize {
    active_count * BYTES_PER_WEIGHT + if with_mask { total.div_ceil(8) } else { 0 }
}

/// Running training-cost tally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostMeter {
    forward_per_iteration: f64,
    sparsity: f64,
    total: f64,
}

impl CostMeter {
    pub fn new(forward_per_iteration: f64, sparsity: f64) -> Self {
        Self {
            forward_per_iteration,
            sparsity,
            total: 0.0,
        }
    }

    pub fn sparse_step(&mut self) {
        self.total += macs_training(self.forward_per_iteration, 1, 0, self.sparsity);
    }

    pub fn dense_step(&mut self) {
        self.total += macs_training(self.forward_per_iteration, 0, 1, self.sparsity);
    }

    pub fn add(&mut self, macs: f64) {
        self.total += macs;
    }

    pub fn total(&self) -> f64 {
        self.total
    }
}
