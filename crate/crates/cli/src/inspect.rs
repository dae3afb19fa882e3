use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dynsparse::data::load_split;
use dynsparse::embedding::Checkpoint;
use dynsparse::evaluation::{sparsity_profile, ProfileSide, SparsityProfile};
use dynsparse::trainer::{self, Method};
use serde::Serialize;

use crate::failure::Failure;
use crate::sweep::{CELLS_DIR, SWEEP_FILE};

pub const PROFILE_JSON: &str = "profile.json";

#[derive(Args)]
pub struct ProfileArgs {
    /// Finished run directory.
    #[arg(long)]
    run: PathBuf,
    /// Prepared split directory; defaults to the run's configured data.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Number of popularity groups per side.
    #[arg(long, default_value_t = 10)]
    groups: usize,
    /// Where to write the profile files; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ProfileRow {
    group_id: usize,
    side: &'static str,
    size: usize,
    mean_popularity: f64,
    mean_sparsity: f64,
}

#[derive(Serialize)]
struct ProfileSummary {
    groups: usize,
    users_spearman: Option<f64>,
    items_spearman: Option<f64>,
}

fn write_profile(path: &Path, profile: &SparsityProfile) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(dynsparse::Error::from)?;
    for g in &profile.groups {
        w.serialize(ProfileRow {
            group_id: g.group_id,
            side: profile.side.as_str(),
            size: g.size,
            mean_popularity: g.mean_popularity,
            mean_sparsity: g.mean_sparsity,
        })
        .map_err(dynsparse::Error::from)?;
    }
    w.flush().map_err(dynsparse::Error::from)?;
    Ok(())
}

fn fmt_corr(c: Option<f64>) -> String {
    c.map_or_else(|| "null".into(), |v| format!("{v:.4}"))
}

pub fn profile(args: ProfileArgs) -> Result<(), Failure> {
    if args.groups == 0 {
        return Err(Failure::Usage("--groups must be at least 1".into()));
    }
    let ckpt_path = args.run.join(trainer::CHECKPOINT_FILE);
    if !ckpt_path.exists() {
        return Err(Failure::Usage(format!(
            "missing checkpoint {}",
            ckpt_path.display()
        )));
    }
    let data = match args.data {
        Some(d) => d,
        None => trainer::read_config(&args.run.join(trainer::CONFIG_FILE))
            .map_err(Failure::input)?
            .data
            .ok_or_else(|| Failure::Usage("run config has no data path; pass --data".into()))?,
    };
    let (ds, _) = load_split(&data).map_err(Failure::input)?;
    let (_, mask) = Checkpoint::load(&ckpt_path)
        .and_then(|c| c.restore())
        .map_err(Failure::input)?;
    if mask.shape().0 != ds.num_users() + ds.num_items() {
        return Err(Failure::Usage(format!(
            "checkpoint has {} rows but the dataset has {} users and {} items",
            mask.shape().0,
            ds.num_users(),
            ds.num_items()
        )));
    }
    let out = args.out.unwrap_or_else(|| args.run.clone());
    fs::create_dir_all(&out).map_err(dynsparse::Error::from)?;
    let users = sparsity_profile(&mask, &ds, ProfileSide::Users, args.groups);
    let items = sparsity_profile(&mask, &ds, ProfileSide::Items, args.groups);
    write_profile(&out.join("profile_users.csv"), &users)?;
    write_profile(&out.join("profile_items.csv"), &items)?;
    let summary = ProfileSummary {
        groups: args.groups,
        users_spearman: users.popularity_correlation(),
        items_spearman: items.popularity_correlation(),
    };
    let json = serde_json::to_string_pretty(&summary).map_err(dynsparse::Error::from)?;
    fs::write(out.join(PROFILE_JSON), json + "\n").map_err(dynsparse::Error::from)?;
    for p in [&users, &items] {
        let s: Vec<String> = p
            .mean_sparsities()
            .iter()
            .map(|v| format!("{v:.3}"))
            .collect();
        println!(
            "{:5} sparsity by popularity group: [{}]",
            p.side.as_str(),
            s.join(", ")
        );
    }
    println!(
        "spearman(popularity rank, sparsity): users={} items={}",
        fmt_corr(summary.users_spearman),
        fmt_corr(summary.items_spearman)
    );
    Ok(())
}

#[derive(Args)]
pub struct ReportArgs {
    /// Run directories and/or sweep output directories.
    #[arg(required = true)]
    paths: Vec<PathBuf>,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Serialize)]
struct ReportRow {
    run_id: String,
    method: Method,
    seed: u64,
    iteration: usize,
    k: usize,
    recall: f64,
    ndcg: f64,
    hr: f64,
    sparsity: f64,
    macs_train: f64,
    macs_infer: f64,
}

fn run_dirs(path: &Path) -> Result<Vec<PathBuf>, Failure> {
    if !path.join(SWEEP_FILE).exists() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut dirs: Vec<PathBuf> = fs::read_dir(path.join(CELLS_DIR))
        .map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(trainer::METRICS_FILE).exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn report_row(dir: &Path) -> Result<ReportRow, Failure> {
    let cfg = trainer::read_config(&dir.join(trainer::CONFIG_FILE))
        .map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let rows = trainer::read_metrics_csv(&dir.join(trainer::METRICS_FILE))
        .map_err(|e| Failure::Usage(format!("{}: {e}", dir.display())))?;
    let last = rows
        .last()
        .ok_or_else(|| Failure::Usage(format!("{}: empty metrics", dir.display())))?;
    Ok(ReportRow {
        run_id: last.run_id.clone(),
        method: cfg.method,
        seed: cfg.seed,
        iteration: last.iteration,
        k: last.k,
        recall: last.recall,
        ndcg: last.ndcg,
        hr: last.hr,
        sparsity: last.sparsity,
        macs_train: last.macs_train_cum,
        macs_infer: last.macs_infer,
    })
}

pub fn report(args: ReportArgs) -> Result<(), Failure> {
    let mut rows = Vec::new();
    for path in &args.paths {
        for dir in run_dirs(path)? {
            rows.push(report_row(&dir)?);
        }
    }
    println!(
        "{:<28} {:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} {:>12} {:>12}",
        "run_id",
        "method",
        "seed",
        "iter",
        "recall",
        "ndcg",
        "hr",
        "sparsity",
        "macs_train",
        "macs_infer"
    );
    for r in &rows {
        println!(
            "{:<28} {:>6} {:>6} {:>8} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>12.4e} {:>12.4e}",
            r.run_id,
            r.method.as_str(),
            r.seed,
            r.iteration,
            r.recall,
            r.ndcg,
            r.hr,
            r.sparsity,
            r.macs_train,
            r.macs_infer
        );
    }
    if let Some(out) = &args.out {
        let mut w = csv::Writer::from_path(out).map_err(dynsparse::Error::from)?;
        for r in &rows {
            w.serialize(r).map_err(dynsparse::Error::from)?;
        }
        w.flush().map_err(dynsparse::Error::from)?;
    }
    Ok(())
}
