//! Full-ranking top-K evaluation and the popularity/sparsity profile.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::InteractionDataset;
use crate::embedding::{apply_mask, EmbeddingTable, SparseMask};
use crate::error::Result;
use crate::models::{dot, Model};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub users_evaluated: usize,
}

/// Per-user metric triple `(recall, ndcg, hr)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UserMetrics {
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
}

/// Top-`k` candidates by descending score, ties to the lower item index.
/// `excluded` must be sorted.
pub fn top_k(scores: &[f64], excluded: &[usize], k: usize) -> Vec<usize> {
    let mut cands: Vec<usize> = (0..scores.len())
        .filter(|i| excluded.binary_search(i).is_err())
        .collect();
    let cmp =
        |a: &usize, b: &usize| -> Ordering { scores[*b].total_cmp(&scores[*a]).then(a.cmp(b)) };
    if k == 0 {
        return Vec::new();
    }
    if k < cands.len() {
        cands.select_nth_unstable_by(k - 1, cmp);
        cands.truncate(k);
    }
    cands.sort_unstable_by(cmp);
    cands
}

/// Recall, NDCG and hit indicator of one ranked list against sorted `relevant`.
pub fn rank_metrics(ranked: &[usize], relevant: &[usize], k: usize) -> UserMetrics {
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (pos, item) in ranked.iter().take(k).enumerate() {
        if relevant.binary_search(item).is_ok() {
            hits += 1;
            dcg += 1.0 / ((pos + 2) as f64).log2();
        }
    }
    let ideal = relevant.len().min(k);
    let idcg: f64 = (0..ideal).map(|pos| 1.0 / ((pos + 2) as f64).log2()).sum();
    UserMetrics {
        recall: hits as f64 / relevant.len() as f64,
        ndcg: if idcg > 0.0 { dcg / idcg } else { 0.0 },
        hr: if hits > 0 { 1.0 } else { 0.0 },
    }
}

/// Evaluates arbitrary per-user score rows; `score_user(u, out)` fills the
/// scores of all items for user `u`.
pub fn evaluate_with<F>(ds: &InteractionDataset, k: usize, score_user: F) -> MetricsReport
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    let users: Vec<usize> = (0..ds.num_users())
        .filter(|&u| !ds.user_test_items(u).is_empty())
        .collect();
    let per_user: Vec<UserMetrics> = users
        .par_iter()
        .map_init(
            || vec![0.0; ds.num_items()],
            |scores, &u| {
                score_user(u, scores);
                let ranked = top_k(scores, ds.user_train_items(u), k);
                rank_metrics(&ranked, ds.user_test_items(u), k)
            },
        )
        .collect();
    // Sequential reduction keeps the result bit-for-bit reproducible.
    let n = per_user.len();
    let mean = |f: fn(&UserMetrics) -> f64| {
        if n == 0 {
            0.0
        } else {
            per_user.iter().map(f).sum::<f64>() / n as f64
        }
    };
    MetricsReport {
        k,
        recall: mean(|m| m.recall),
        ndcg: mean(|m| m.ndcg),
        hr: mean(|m| m.hr),
        users_evaluated: n,
    }
}

/// Full-ranking evaluation of the masked table.
pub fn evaluate(
    model: &Model,
    table: &EmbeddingTable,
    mask: &SparseMask,
    ds: &InteractionDataset,
    k: usize,
) -> Result<MetricsReport> {
    let mut masked = table.clone();
    apply_mask(&mut masked, mask)?;
    let finals = model.propagate(&masked);
    Ok(evaluate_with(ds, k, |u, out| {
        let eu = finals.user(u);
        for (i, s) in out.iter_mut().enumerate() {
            *s = dot(eu, finals.item(i));
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSide {
    Users,
    Items,
}

impl ProfileSide {
    pub fn as_str(&self) -> &'static str {
        match self {
            ProfileSide::Users => "users",
            ProfileSide::Items => "items",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileGroup {
    pub group_id: usize,
    pub size: usize,
    pub mean_popularity: f64,
    pub mean_sparsity: f64,
}

/// Mean embedding sparsity of popularity-sorted entity groups; group 0 is the
/// least popular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityProfile {
    pub side: ProfileSide,
    pub groups: Vec<ProfileGroup>,
}

impl SparsityProfile {
    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn mean_sparsities(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.mean_sparsity).collect()
    }

    /// Spearman correlation between group popularity rank and mean sparsity;
    /// `None` when either side is constant.
    pub fn popularity_correlation(&self) -> Option<f64> {
        let ranks: Vec<f64> = self.groups.iter().map(|g| g.group_id as f64).collect();
        spearman(&ranks, &self.mean_sparsities())
    }
}

pub fn sparsity_profile(
    mask: &SparseMask,
    ds: &InteractionDataset,
    side: ProfileSide,
    num_groups: usize,
) -> SparsityProfile {
    let (degrees, row_offset) = match side {
        ProfileSide::Users => (ds.user_degrees(), 0),
        ProfileSide::Items => (ds.item_degrees(), ds.num_users()),
    };
    let dim = mask.shape().1;
    let mut order: Vec<usize> = (0..degrees.len()).collect();
    order.sort_by_key(|&e| (degrees[e], e));
    let population = order.len();
    let num_groups = num_groups.clamp(1, population.max(1));
    let mut groups = Vec::with_capacity(num_groups);
    let mut start = 0;
    for g in 0..num_groups {
        // First `population % num_groups` groups take one extra member.
        let size = population / num_groups + usize::from(g < population % num_groups);
        let members = &order[start..start + size];
        start += size;
        let denom = size.max(1) as f64;
        let mean_popularity = members.iter().map(|&e| degrees[e] as f64).sum::<f64>() / denom;
        let mean_sparsity = members
            .iter()
            .map(|&e| 1.0 - mask.row_active_count(row_offset + e) as f64 / dim as f64)
            .sum::<f64>()
            / denom;
        groups.push(ProfileGroup {
            group_id: g,
            size,
            mean_popularity,
            mean_sparsity,
        });
    }
    SparsityProfile { side, groups }
}

/// Average ranks (1-based), ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with tie-averaged ranks; `None` if undefined.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}
