//! Offline interaction generator with power-law popularity and a low-rank
//! preference signal.
//!
//! Each user `u` has a latent vector `z_u` and each item a vector `z_i`. The
//! user samples its items without replacement with probability proportional
//! to `pop_i * exp(affinity * z_u . z_i)`, where `pop_i ~ rank^-exponent`.
//! User activity follows the same power law, floored at `min_user_degree`.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::data::InteractionDataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub num_users: usize,
    pub num_items: usize,
    /// Target number of interactions (approximate).
    pub interactions: usize,
    pub popularity_exponent: f64,
    pub latent_dim: usize,
    pub affinity: f64,
    pub min_user_degree: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    /// MovieLens-100K-sized defaults.
    fn default() -> Self {
        Self {
            num_users: 943,
            num_items: 1682,
            interactions: 100_000,
            popularity_exponent: 0.8,
            latent_dim: 16,
            affinity: 2.0,
            min_user_degree: 10,
            seed: 7,
        }
    }
}

fn power_law_weights<R: Rng + ?Sized>(n: usize, exponent: f64, rng: &mut R) -> Vec<f64> {
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(rng);
    ranks
        .into_iter()
        .map(|r| ((r + 1) as f64).powf(-exponent))
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Result<InteractionDataset> {
    if cfg.num_users == 0 || cfg.num_items < 2 || cfg.latent_dim == 0 {
        return Err(Error::InvalidConfig(
            "synthetic data needs users, at least two items and a latent dimension".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (n, m, r) = (cfg.num_users, cfg.num_items, cfg.latent_dim);
    let normal = Normal::new(0.0, 1.0 / (r as f64).sqrt()).expect("valid normal");
    let mut latent =
        |count: usize| -> Vec<f64> { (0..count * r).map(|_| normal.sample(&mut rng)).collect() };
    let users = latent(n);
    let items = latent(m);
    let item_log_pop: Vec<f64> = power_law_weights(m, cfg.popularity_exponent, &mut rng)
        .into_iter()
        .map(f64::ln)
        .collect();
    let activity = power_law_weights(n, cfg.popularity_exponent, &mut rng);
    let activity_sum: f64 = activity.iter().sum();
    let max_degree = (m / 2).max(1);
    let min_degree = cfg.min_user_degree.clamp(1, max_degree);

    let gumbel = |rng: &mut ChaCha8Rng| -> f64 {
        let u: f64 = rng.random_range(f64::MIN_POSITIVE..1.0);
        -(-u.ln()).ln()
    };
    let mut edges = Vec::with_capacity(cfg.interactions);
    let mut keys: Vec<(f64, usize)> = Vec::with_capacity(m);
    for u in 0..n {
        let deg = ((cfg.interactions as f64 * activity[u] / activity_sum).round() as usize)
            .clamp(min_degree, max_degree);
        let zu = &users[u * r..(u + 1) * r];
        keys.clear();
        for i in 0..m {
            let zi = &items[i * r..(i + 1) * r];
            let affinity: f64 = zu.iter().zip(zi).map(|(a, b)| a * b).sum();
            keys.push((
                item_log_pop[i] + cfg.affinity * affinity + gumbel(&mut rng),
                i,
            ));
        }
        // Gumbel top-k: sampling without replacement proportional to exp(logit).
        keys.select_nth_unstable_by(deg - 1, |a, b| b.0.total_cmp(&a.0));
        let mut chosen: Vec<usize> = keys[..deg].iter().map(|&(_, i)| i).collect();
        chosen.sort_unstable();
        edges.extend(chosen.into_iter().map(|i| (u, i)));
    }
    InteractionDataset::new(n, m, edges, Vec::new())
}
