use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use dynsparse::data::{InteractionDataset, SplitManifest};
use dynsparse::trainer::{self, Method, RunConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::failure::Failure;
use crate::run;

pub const SWEEP_FILE: &str = "sweep.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const SPEC_FILE: &str = "sweep_spec.json";
pub const CELLS_DIR: &str = "cells";
pub const CELL_FILE: &str = "cell.json";

#[derive(Args)]
pub struct SweepArgs {
    /// JSON sweep spec: {"base": {...}, "sparsities": [...], "methods": [...], "seeds": [...]}.
    #[arg(long)]
    spec: PathBuf,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Cells trained concurrently.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Skip cells that already finished successfully with the same config.
    #[arg(long)]
    resume: bool,
    /// Prepared split directory; overrides `base.data`.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub base: RunConfig,
    pub sparsities: Vec<f64>,
    pub methods: Vec<Method>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone)]
struct Cell {
    id: String,
    config: RunConfig,
    dir: PathBuf,
}

/// Persisted outcome of one cell; doubles as the resume marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct CellResult {
    status: String,
    recall: Option<f64>,
    ndcg: Option<f64>,
    macs_train: Option<f64>,
    macs_infer: Option<f64>,
    memory: Option<usize>,
}

impl CellResult {
    fn failed(message: String) -> Self {
        Self {
            status: format!("failed: {message}"),
            recall: None,
            ndcg: None,
            macs_train: None,
            macs_infer: None,
            memory: None,
        }
    }

    fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

/// One row per (sparsity, method, seed) cell.
#[derive(Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub sparsity: f64,
    pub seed: u64,
    pub seed_count: usize,
    pub recall_mean: Option<f64>,
    pub recall_std: Option<f64>,
    pub ndcg_mean: Option<f64>,
    pub ndcg_std: Option<f64>,
    pub macs_train: Option<f64>,
    pub macs_infer: Option<f64>,
    pub memory: Option<usize>,
    pub status: String,
}

/// Aggregate over the seeds of one (sparsity, method) pair.
#[derive(Debug, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub sparsity: f64,
    pub seed_count: usize,
    pub recall_mean: Option<f64>,
    pub recall_std: Option<f64>,
    pub ndcg_mean: Option<f64>,
    pub ndcg_std: Option<f64>,
    pub macs_train: Option<f64>,
    pub macs_infer: Option<f64>,
    pub memory: Option<f64>,
    pub failed: usize,
}

/// Mean and sample standard deviation; the deviation is 0 for one value.
fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    Some((mean, std))
}

fn cells(spec: &SweepSpec, out: &Path) -> Vec<Cell> {
    let mut cells = Vec::new();
    for &sparsity in &spec.sparsities {
        for &method in &spec.methods {
            for &seed in &spec.seeds {
                let id = format!("{method}-s{sparsity}-seed{seed}");
                let mut config = RunConfig {
                    run_id: id.clone(),
                    method,
                    sparsity,
                    seed,
                    ..spec.base.clone()
                };
                if method == Method::Omp {
                    config.dense_checkpoint = Some(dense_checkpoint_path(out, seed));
                }
                cells.push(Cell {
                    dir: out.join(CELLS_DIR).join(&id),
                    id,
                    config,
                });
            }
        }
    }
    cells
}

fn dense_checkpoint_path(out: &Path, seed: u64) -> PathBuf {
    out.join("dense").join(format!("seed{seed}.ckpt"))
}

fn read_cell(cell: &Cell) -> Option<CellResult> {
    let stored = trainer::read_config(&cell.dir.join(trainer::CONFIG_FILE)).ok()?;
    if stored != cell.config {
        return None;
    }
    let text = fs::read_to_string(cell.dir.join(CELL_FILE)).ok()?;
    serde_json::from_str::<CellResult>(&text)
        .ok()
        .filter(CellResult::is_ok)
}

fn write_cell(cell: &Cell, result: &CellResult) -> Result<(), Failure> {
    fs::create_dir_all(&cell.dir).map_err(dynsparse::Error::from)?;
    let json = serde_json::to_string_pretty(result).map_err(dynsparse::Error::from)?;
    fs::write(cell.dir.join(CELL_FILE), json + "\n").map_err(dynsparse::Error::from)?;
    Ok(())
}

fn run_cell(cell: &Cell, ds: &InteractionDataset, manifest: &SplitManifest) -> CellResult {
    let result = match cell.config.validate() {
        Err(e) => CellResult::failed(e.to_string()),
        Ok(()) => match run::execute(&cell.config, ds, manifest, &cell.dir, false) {
            Ok(outcome) => {
                let m = outcome.final_metrics();
                CellResult {
                    status: "ok".into(),
                    recall: Some(m.recall),
                    ndcg: Some(m.ndcg),
                    macs_train: Some(outcome.cost.macs_train),
                    macs_infer: Some(outcome.cost.macs_infer),
                    memory: Some(outcome.cost.memory_bytes),
                }
            }
            Err(f) => CellResult::failed(f.to_string()),
        },
    };
    if let Err(e) = write_cell(cell, &result) {
        return CellResult::failed(e.to_string());
    }
    result
}

/// Trains the dense models that OMP cells prune, once per seed, so parallel
/// cells never race on the same checkpoint file. Returns per-seed failures.
fn pretrain_dense(cells: &[Cell], ds: &InteractionDataset) -> Vec<(u64, String)> {
    let mut pending: Vec<&Cell> = Vec::new();
    for cell in cells.iter().filter(|c| c.config.method == Method::Omp) {
        let path = cell
            .config
            .dense_checkpoint
            .as_ref()
            .expect("omp cells carry a path");
        if !path.exists() && !pending.iter().any(|c| c.config.seed == cell.config.seed) {
            pending.push(cell);
        }
    }
    pending
        .par_iter()
        .filter_map(|cell| {
            let path = cell
                .config
                .dense_checkpoint
                .clone()
                .expect("omp cells carry a path");
            let dense = RunConfig {
                method: Method::Dense,
                dense_checkpoint: None,
                ..cell.config.clone()
            };
            let saved = trainer::train(&dense, ds).and_then(|outcome| {
                fs::create_dir_all(path.parent().expect("checkpoint lives in a directory"))?;
                outcome.checkpoint().save(&path)
            });
            saved.err().map(|e| (cell.config.seed, e.to_string()))
        })
        .collect()
}

fn summarize(spec: &SweepSpec, cells: &[Cell], results: &[CellResult]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for &sparsity in &spec.sparsities {
        for &method in &spec.methods {
            let group: Vec<&CellResult> = cells
                .iter()
                .zip(results)
                .filter(|(c, _)| c.config.method == method && c.config.sparsity == sparsity)
                .map(|(_, r)| r)
                .collect();
            let ok: Vec<&CellResult> = group.iter().copied().filter(|r| r.is_ok()).collect();
            let collect = |f: fn(&CellResult) -> Option<f64>| -> Vec<f64> {
                ok.iter().filter_map(|r| f(r)).collect()
            };
            let recall = mean_std(&collect(|r| r.recall));
            let ndcg = mean_std(&collect(|r| r.ndcg));
            let mean = |f: fn(&CellResult) -> Option<f64>| mean_std(&collect(f)).map(|(m, _)| m);
            rows.push(SummaryRow {
                method,
                sparsity,
                seed_count: ok.len(),
                recall_mean: recall.map(|(m, _)| m),
                recall_std: recall.map(|(_, s)| s),
                ndcg_mean: ndcg.map(|(m, _)| m),
                ndcg_std: ndcg.map(|(_, s)| s),
                macs_train: mean(|r| r.macs_train),
                macs_infer: mean(|r| r.macs_infer),
                memory: mean(|r| r.memory.map(|b| b as f64)),
                failed: group.len() - ok.len(),
            });
        }
    }
    rows
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), Failure> {
    let mut w = csv::Writer::from_path(path).map_err(dynsparse::Error::from)?;
    for row in rows {
        w.serialize(row).map_err(dynsparse::Error::from)?;
    }
    w.flush().map_err(dynsparse::Error::from)?;
    Ok(())
}

fn read_spec(path: &Path) -> Result<SweepSpec, Failure> {
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read sweep spec {}: {e}", path.display())))?;
    let spec: SweepSpec = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("invalid sweep spec {}: {e}", path.display())))?;
    if spec.sparsities.is_empty() || spec.methods.is_empty() || spec.seeds.is_empty() {
        return Err(Failure::Usage(
            "sweep spec needs at least one sparsity, method and seed".into(),
        ));
    }
    Ok(spec)
}

pub fn sweep(args: SweepArgs) -> Result<(), Failure> {
    let mut spec = read_spec(&args.spec)?;
    if args.data.is_some() {
        spec.base.data = args.data.clone();
    }
    if args.workers == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    let (ds, manifest) = run::load_data(&spec.base)?;
    fs::create_dir_all(&args.out).map_err(dynsparse::Error::from)?;
    let spec_json = serde_json::to_string_pretty(&spec).map_err(dynsparse::Error::from)?;
    fs::write(args.out.join(SPEC_FILE), spec_json + "\n").map_err(dynsparse::Error::from)?;

    let cells = cells(&spec, &args.out);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.workers)
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let results: Vec<CellResult> = pool.install(|| {
        let todo: Vec<Cell> = cells
            .iter()
            .filter(|c| !(args.resume && read_cell(c).is_some()))
            .cloned()
            .collect();
        let dense_failures = pretrain_dense(&todo, &ds);
        cells
            .par_iter()
            .map(|cell| {
                if args.resume {
                    if let Some(done) = read_cell(cell) {
                        println!("{}: skipped (already complete)", cell.id);
                        return done;
                    }
                }
                let failed_dense = dense_failures.iter().find(|(seed, _)| {
                    cell.config.method == Method::Omp && *seed == cell.config.seed
                });
                let result = match failed_dense {
                    Some((_, msg)) => {
                        let r = CellResult::failed(format!("dense pretraining failed: {msg}"));
                        write_cell(cell, &r).map(|_| r.clone()).unwrap_or(r)
                    }
                    None => run_cell(cell, &ds, &manifest),
                };
                match result.recall {
                    Some(recall) => {
                        println!("{}: recall@{}={recall:.4}", cell.id, cell.config.eval_k)
                    }
                    None => println!("{}: {}", cell.id, result.status),
                }
                result
            })
            .collect()
    });

    let rows: Vec<SweepRow> = cells
        .iter()
        .zip(&results)
        .map(|(cell, r)| SweepRow {
            method: cell.config.method,
            sparsity: cell.config.sparsity,
            seed: cell.config.seed,
            seed_count: usize::from(r.is_ok()),
            recall_mean: r.recall,
            recall_std: r.recall.map(|_| 0.0),
            ndcg_mean: r.ndcg,
            ndcg_std: r.ndcg.map(|_| 0.0),
            macs_train: r.macs_train,
            macs_infer: r.macs_infer,
            memory: r.memory,
            status: r.status.clone(),
        })
        .collect();
    write_csv(&args.out.join(SWEEP_FILE), &rows)?;
    write_csv(
        &args.out.join(SUMMARY_FILE),
        &summarize(&spec, &cells, &results),
    )?;
    let failed = results.iter().filter(|r| !r.is_ok()).count();
    println!(
        "{} cells ({failed} failed) -> {}",
        results.len(),
        args.out.join(SWEEP_FILE).display()
    );
    Ok(())
}
