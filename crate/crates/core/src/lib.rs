//! Dynamic sparse training for embedding-based collaborative filtering.
//!
//! A recommender's `(users + items) x d` embedding table is trained under a
//! fixed budget of active weights. Every `delta_t` iterations a decaying
//! fraction of the smallest-magnitude active weights is pruned and the same
//! number of inactive weights with the largest gradient magnitude is regrown.
//!
//! Modules:
//! - [`data`]: interaction files, holdout splits, pairwise batch sampling
//! - [`embedding`]: table, bitset mask, masked optimizer step, checkpoints
//! - [`exploration`]: update-ratio schedule, prune/grow, RP and OMP baselines
//! - [`models`]: MF and LightGCN scoring with analytic BPR gradients
//! - [`evaluation`]: full-ranking Recall/NDCG/HR and sparsity profiles
//! - [`cost`]: MAC and memory accounting
//! - [`trainer`]: the training loop and run-directory artifacts
//! - [`synthetic`]: offline dataset generator

pub mod cost;
pub mod data;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod exploration;
pub mod models;
pub mod synthetic;
pub mod trainer;

pub use error::{Error, Result};
