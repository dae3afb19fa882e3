//! Prune-and-regrow exploration under a fixed parameter budget, plus the
//! static baselines (random pruning, one-shot magnitude pruning).

use std::cmp::Ordering;
use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::embedding::{
    active_budget, apply_mask, init_mask, EmbeddingTable, Gradient, OptimizerState, SparseMask,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Decay {
    Cosine,
    Linear,
    None,
}

impl std::str::FromStr for Decay {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "cosine" => Ok(Decay::Cosine),
            "linear" => Ok(Decay::Linear),
            "none" | "constant" => Ok(Decay::None),
            other => Err(format!(
                "unknown decay `{other}` (expected cosine, linear or none)"
            )),
        }
    }
}

/// When and how much of the active budget gets reshuffled.
///
/// An interval larger than `t_end` disables exploration entirely.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExplorationSchedule {
    pub rho0: f64,
    pub delta_t: usize,
    pub t_end: usize,
    pub decay: Decay,
}

impl ExplorationSchedule {
    pub fn new(rho0: f64, delta_t: usize, t_end: usize, decay: Decay) -> Result<Self> {
        let sched = Self {
            rho0,
            delta_t,
            t_end,
            decay,
        };
        sched.validate()?;
        Ok(sched)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rho0) {
            return Err(Error::InvalidConfig(format!(
                "initial update ratio {} outside [0, 1]",
                self.rho0
            )));
        }
        if self.delta_t == 0 || self.t_end == 0 {
            return Err(Error::InvalidConfig(
                "update interval and total iterations must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Update ratio at iteration `t`.
    pub fn update_ratio(&self, t: usize) -> Result<f64> {
        if t > self.t_end {
            return Err(Error::IterationOutOfRange {
                t,
                t_end: self.t_end,
            });
        }
        let progress = t as f64 / self.t_end as f64;
        Ok(match self.decay {
            Decay::Cosine => self.rho0 / 2.0 * (1.0 + (PI * progress).cos()),
            Decay::Linear => self.rho0 * (1.0 - progress),
            Decay::None => self.rho0,
        })
    }

    /// Exploration fires strictly inside the run on multiples of the interval.
    pub fn is_exploration_step(&self, t: usize) -> bool {
        t > 0 && t < self.t_end && t.is_multiple_of(self.delta_t)
    }

    pub fn exploration_count(&self) -> usize {
        (1..self.t_end)
            .filter(|&t| self.is_exploration_step(t))
            .count()
    }
}

pub fn update_ratio(sched: &ExplorationSchedule, t: usize) -> Result<f64> {
    sched.update_ratio(t)
}

/// Record of one prune-and-regrow event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExplorationEvent {
    pub t: usize,
    pub rho_t: f64,
    pub pruned: Vec<usize>,
    pub grown: Vec<usize>,
    pub sparsity_after: f64,
    /// Whether a growth gradient had to be computed.
    #[serde(skip)]
    pub gradient_evaluated: bool,
}

/// Orders `(key, position)` so the wanted entries come first.
fn select_k(
    mut candidates: Vec<(f64, usize)>,
    k: usize,
    cmp: impl Fn(&(f64, usize), &(f64, usize)) -> Ordering,
) -> Vec<usize> {
    if k == 0 {
        return Vec::new();
    }
    if k < candidates.len() {
        candidates.select_nth_unstable_by(k - 1, &cmp);
        candidates.truncate(k);
    }
    let mut picked: Vec<usize> = candidates.into_iter().map(|(_, p)| p).collect();
    picked.sort_unstable();
    picked
}

fn smallest_first(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    a.0.total_cmp(&b.0).then(a.1.cmp(&b.1))
}

fn largest_first(a: &(f64, usize), b: &(f64, usize)) -> Ordering {
    b.0.total_cmp(&a.0).then(a.1.cmp(&b.1))
}

/// The `floor(rho * active)` active positions with the smallest magnitude,
/// ties to the lower position. Returned in ascending position order.
pub fn select_prune(table: &EmbeddingTable, mask: &SparseMask, rho: f64) -> Vec<usize> {
    let k = (rho.clamp(0.0, 1.0) * mask.active_count() as f64).floor() as usize;
    prune_k(table, mask, k)
}

fn prune_k(table: &EmbeddingTable, mask: &SparseMask, k: usize) -> Vec<usize> {
    let w = table.weights();
    let candidates = mask.active_positions().map(|p| (w[p].abs(), p)).collect();
    select_k(candidates, k, smallest_first)
}

/// The `k` inactive positions with the largest gradient magnitude, skipping
/// `excluded` (sorted). Ties go to the lower position.
pub fn select_grow(
    grad: &Gradient,
    mask: &SparseMask,
    k: usize,
    excluded: &[usize],
) -> Result<Vec<usize>> {
    let g = grad.values();
    let candidates: Vec<(f64, usize)> = mask
        .inactive_positions()
        .filter(|p| excluded.binary_search(p).is_err())
        .map(|p| (g[p].abs(), p))
        .collect();
    if k > candidates.len() {
        return Err(Error::GrowExceedsEligible {
            requested: k,
            eligible: candidates.len(),
        });
    }
    Ok(select_k(candidates, k, largest_first))
}

/// One prune-and-regrow event at iteration `t`.
///
/// Prunes the smallest-magnitude active weights, asks `grad_fn` for a dense
/// gradient of the pruned table, then activates the same number of inactive
/// positions with the largest gradient magnitude. Grown weights start at zero
/// with fresh optimizer moments. The prune count is capped by the number of
/// positions eligible for growth so the budget is preserved.
pub fn exploration_step<F>(
    table: &mut EmbeddingTable,
    mask: &mut SparseMask,
    opt: &mut OptimizerState,
    sched: &ExplorationSchedule,
    t: usize,
    grad_fn: F,
) -> Result<ExplorationEvent>
where
    F: FnOnce(&EmbeddingTable) -> Result<Gradient>,
{
    let rho_t = sched.update_ratio(t)?;
    let wanted = (rho_t.clamp(0.0, 1.0) * mask.active_count() as f64).floor() as usize;
    let k = wanted.min(mask.inactive_count());
    if k < wanted {
        log::debug!("iteration {t}: update count capped from {wanted} to {k}");
    }
    if k == 0 {
        return Ok(ExplorationEvent {
            t,
            rho_t,
            pruned: Vec::new(),
            grown: Vec::new(),
            sparsity_after: mask.sparsity(),
            gradient_evaluated: false,
        });
    }

    let pruned = prune_k(table, mask, k);
    let weights = table.weights_mut();
    for &p in &pruned {
        mask.deactivate(p);
        weights[p] = 0.0;
    }
    opt.reset_positions(&pruned);

    // Restore the mask on failure so callers never observe a partial event.
    let grad = match grad_fn(table) {
        Ok(g) => g,
        Err(e) => {
            for &p in &pruned {
                mask.activate(p);
            }
            return Err(e);
        }
    };
    let grown = select_grow(&grad, mask, k, &pruned)?;
    let weights = table.weights_mut();
    for &p in &grown {
        mask.activate(p);
        weights[p] = 0.0;
    }
    opt.reset_positions(&grown);

    Ok(ExplorationEvent {
        t,
        rho_t,
        pruned,
        grown,
        sparsity_after: mask.sparsity(),
        gradient_evaluated: true,
    })
}

/// Random pruning baseline: a random mask applied once and never updated.
pub fn random_prune_once<R: Rng + ?Sized>(
    table: &mut EmbeddingTable,
    s: f64,
    rng: &mut R,
) -> Result<SparseMask> {
    let mask = init_mask(table.shape(), s, rng)?;
    apply_mask(table, &mask)?;
    Ok(mask)
}

/// One-shot magnitude pruning: keep the largest-magnitude weights of a
/// trained table, ties to the lower position.
pub fn one_shot_magnitude_prune(table: &EmbeddingTable, s: f64) -> Result<SparseMask> {
    if !(0.0..1.0).contains(&s) {
        return Err(Error::InvalidSparsity(s));
    }
    let keep = active_budget(table.len(), s);
    let candidates = table
        .weights()
        .iter()
        .enumerate()
        .map(|(p, w)| (w.abs(), p))
        .collect();
    let kept = select_k(candidates, keep, largest_first);
    Ok(SparseMask::from_positions(table.shape(), s, kept))
}
