//! Trains dense, RP and DSL on the bundled synthetic data and prints final
//! Recall@20 per seed.
//!
//! Usage: `cargo run --release --example desk_scale -- [t_end] [delta_t] [lr] [batch] [seeds] [reg]`

use std::time::Instant;

use dynsparse::data::split_holdout;
use dynsparse::exploration::Decay;
use dynsparse::synthetic::{generate, SyntheticConfig};
use dynsparse::trainer::{train, Method, RunConfig};

fn arg<T: std::str::FromStr>(i: usize, default: T) -> T {
    std::env::args()
        .nth(i)
        .and_then(|a| a.parse().ok())
        .unwrap_or(default)
}

fn main() {
    let t_end: usize = arg(1, 4000);
    let delta_t: usize = arg(2, 400);
    let lr: f64 = arg(3, 2e-3);
    let batch: usize = arg(4, 1024);
    let seeds: u64 = arg(5, 5);
    let reg: f64 = arg(6, 1e-2);
    let ds = split_holdout(&generate(&SyntheticConfig::default()).unwrap(), 0.2, 1).unwrap();
    println!(
        "{} train / {} test edges",
        ds.train_edges().len(),
        ds.test_edges().len()
    );
    let runs = [
        ("dense", Method::Dense, Decay::Cosine),
        ("rp", Method::Rp, Decay::Cosine),
        ("dsl", Method::Dsl, Decay::Cosine),
        ("dsl-none", Method::Dsl, Decay::None),
    ];
    for (name, method, decay) in runs {
        let start = Instant::now();
        let mut recalls = Vec::new();
        for seed in 0..seeds {
            let cfg = RunConfig {
                method,
                decay,
                t_end,
                delta_t,
                lr,
                reg,
                batch_size: batch,
                eval_every: Some(t_end),
                seed,
                ..RunConfig::default()
            };
            recalls.push(train(&cfg, &ds).unwrap().final_metrics().recall);
        }
        let mean = recalls.iter().sum::<f64>() / recalls.len() as f64;
        println!(
            "{name:9} mean {mean:.4} {recalls:.4?} ({:.1?})",
            start.elapsed()
        );
    }
}
