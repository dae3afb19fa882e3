//! End-to-end training: sparse learning interleaved with periodic
//! exploration, evaluation snapshots, and run-directory artifacts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cost::{self, CostMeter, CostReport};
use crate::data::{sample_batch, InteractionDataset, SplitManifest, MANIFEST_FILE};
use crate::embedding::{
    apply_mask, masked_step, max_inactive_magnitude, Checkpoint, EmbeddingTable, Gradient,
    OptimizerKind, OptimizerState, SparseMask,
};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, MetricsReport};
use crate::exploration::{
    exploration_step, one_shot_magnitude_prune, random_prune_once, Decay, ExplorationEvent,
    ExplorationSchedule,
};
use crate::models::{BackboneConfig, BackboneKind, Model};

pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const EXPLORATION_FILE: &str = "exploration.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.final";
pub const LAST_GOOD_FILE: &str = "checkpoint.last_good";

/// RNG stream ids derived from the run seed.
const STREAM_INIT: u64 = 0;
const STREAM_BATCHES: u64 = 1;
const STREAM_FINETUNE: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Prune-and-regrow sparse training.
    Dsl,
    /// Unpruned baseline.
    Dense,
    /// Static random mask.
    Rp,
    /// Dense training, one-shot magnitude pruning, sparse fine-tuning.
    Omp,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Dsl => "dsl",
            Method::Dense => "dense",
            Method::Rp => "rp",
            Method::Omp => "omp",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "dsl" => Ok(Method::Dsl),
            "dense" => Ok(Method::Dense),
            "rp" => Ok(Method::Rp),
            "omp" => Ok(Method::Omp),
            other => Err(format!(
                "unknown method `{other}` (expected dsl, dense, rp or omp)"
            )),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fully resolved run configuration. Missing JSON fields take the defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run_id: String,
    /// Prepared split directory; used by the command-line front end.
    pub data: Option<PathBuf>,
    pub method: Method,
    pub backbone: BackboneKind,
    pub layers: usize,
    pub dim: usize,
    pub sparsity: f64,
    pub rho0: f64,
    pub delta_t: usize,
    pub t_end: usize,
    pub decay: Decay,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub reg: f64,
    pub batch_size: usize,
    /// Defaults to `delta_t`.
    pub eval_every: Option<usize>,
    pub eval_k: usize,
    pub init_std: f64,
    pub seed: u64,
    /// Dense model reused (or written) by the one-shot magnitude pipeline.
    pub dense_checkpoint: Option<PathBuf>,
    /// Sparse fine-tuning length for OMP; defaults to `t_end / 4`.
    pub finetune_iters: Option<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            run_id: "run".into(),
            data: None,
            method: Method::Dsl,
            backbone: BackboneKind::Mf,
            layers: 3,
            dim: 64,
            sparsity: 0.5,
            rho0: 0.3,
            delta_t: 2000,
            t_end: 20_000,
            decay: Decay::Cosine,
            optimizer: OptimizerKind::Adam,
            lr: 1e-3,
            reg: 1e-4,
            batch_size: 2048,
            eval_every: None,
            eval_k: 20,
            init_std: 0.01,
            seed: 2024,
            dense_checkpoint: None,
            finetune_iters: None,
        }
    }
}

impl RunConfig {
    /// Sparsity actually enforced (dense runs ignore the configured value).
    pub fn effective_sparsity(&self) -> f64 {
        match self.method {
            Method::Dense => 0.0,
            _ => self.sparsity,
        }
    }

    pub fn backbone_config(&self) -> BackboneConfig {
        BackboneConfig {
            kind: self.backbone,
            layers: self.layers,
        }
    }

    pub fn schedule(&self) -> ExplorationSchedule {
        ExplorationSchedule {
            rho0: self.rho0,
            delta_t: self.delta_t,
            t_end: self.t_end,
            decay: self.decay,
        }
    }

    pub fn eval_interval(&self) -> usize {
        self.eval_every.unwrap_or(self.delta_t).max(1)
    }

    pub fn finetune_len(&self) -> usize {
        self.finetune_iters.unwrap_or(self.t_end / 4)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.dim == 0 {
            return bad("embedding dimension must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.eval_k == 0 {
            return bad("evaluation cutoff must be at least 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.lr));
        }
        if !(self.reg >= 0.0 && self.reg.is_finite()) {
            return bad(format!(
                "regularization must be nonnegative, got {}",
                self.reg
            ));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return bad(format!(
                "init std must be nonnegative, got {}",
                self.init_std
            ));
        }
        if !(0.0..1.0).contains(&self.sparsity) {
            return Err(Error::InvalidSparsity(self.sparsity));
        }
        if self.backbone == BackboneKind::LightGcn && self.layers == 0 {
            return bad("lightgcn needs at least one layer".into());
        }
        if self.method == Method::Omp && self.dense_checkpoint.is_none() {
            return bad("method omp requires a dense checkpoint path".into());
        }
        self.schedule().validate()
    }
}

/// One evaluation snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub metrics: MetricsReport,
    pub sparsity: f64,
    pub active_count: usize,
    pub max_inactive_abs: f64,
    pub macs_train_cum: f64,
    pub macs_infer: f64,
}

/// Metrics CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub run_id: String,
    pub iteration: usize,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    pub hr: f64,
    pub sparsity: f64,
    pub macs_train_cum: f64,
    pub macs_infer: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub config: RunConfig,
    pub table: EmbeddingTable,
    pub mask: SparseMask,
    pub log: Vec<LogRecord>,
    pub events: Vec<ExplorationEvent>,
    /// Training loss of every weight-update iteration, in order.
    pub losses: Vec<f64>,
    pub cost: CostReport,
}

impl TrainOutcome {
    pub fn final_metrics(&self) -> &MetricsReport {
        &self
            .log
            .last()
            .expect("every run logs its final iteration")
            .metrics
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.table, &self.mask)
    }

    pub fn metrics_rows(&self) -> Vec<MetricsRow> {
        metrics_rows(&self.config.run_id, &self.log)
    }
}

/// State retained when a run aborts on a numerical failure.
#[derive(Debug)]
pub struct AbortedRun {
    pub iteration: usize,
    pub cause: Box<Error>,
    pub last_good: Checkpoint,
    pub log: Vec<LogRecord>,
    pub events: Vec<ExplorationEvent>,
    pub config: RunConfig,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

struct Phase<'a> {
    cfg: &'a RunConfig,
    ds: &'a InteractionDataset,
    model: &'a Model,
    sparsity: f64,
    explore: Option<ExplorationSchedule>,
    iterations: usize,
    /// Added to local iteration numbers in logs.
    offset: usize,
    rng: ChaCha8Rng,
}

struct State {
    table: EmbeddingTable,
    mask: SparseMask,
    opt: OptimizerState,
    meter: CostMeter,
    log: Vec<LogRecord>,
    events: Vec<ExplorationEvent>,
    losses: Vec<f64>,
    last_good: Checkpoint,
}

fn nnz_adjacency(model: &Model) -> usize {
    model.adjacency().map_or(0, |a| a.nnz())
}

fn inference_macs(cfg: &RunConfig, ds: &InteractionDataset, model: &Model, s: f64) -> f64 {
    let layers = match cfg.backbone {
        BackboneKind::Mf => 0,
        BackboneKind::LightGcn => cfg.layers,
    };
    cost::macs_inference(
        cfg.backbone,
        ds.num_users(),
        ds.num_items(),
        cfg.dim,
        layers,
        nnz_adjacency(model),
        s,
    )
}

fn forward_macs(cfg: &RunConfig, model: &Model) -> f64 {
    cost::forward_macs_per_iteration(
        cfg.backbone,
        cfg.batch_size,
        cfg.dim,
        cfg.layers,
        nnz_adjacency(model),
    )
}

impl State {
    fn snapshot(&mut self, phase: &Phase<'_>, t: usize) -> Result<()> {
        let metrics = evaluate(
            phase.model,
            &self.table,
            &self.mask,
            phase.ds,
            phase.cfg.eval_k,
        )?;
        self.log.push(LogRecord {
            iteration: phase.offset + t,
            metrics,
            sparsity: self.mask.sparsity(),
            active_count: self.mask.popcount(),
            max_inactive_abs: max_inactive_magnitude(&self.table, &self.mask),
            macs_train_cum: self.meter.total(),
            macs_infer: inference_macs(phase.cfg, phase.ds, phase.model, phase.sparsity),
        });
        if self.table.weights().iter().all(|w| w.is_finite()) {
            self.last_good = Checkpoint::capture(&self.table, &self.mask);
        }
        Ok(())
    }

    fn abort(self, iteration: usize, cause: Error, cfg: &RunConfig) -> Error {
        Error::Aborted(Box::new(AbortedRun {
            iteration,
            cause: Box::new(cause),
            last_good: self.last_good,
            log: self.log,
            events: self.events,
            config: cfg.clone(),
        }))
    }

    fn iterate(&mut self, phase: &mut Phase<'_>, t: usize, grad: &mut Gradient) -> Result<()> {
        let batch = sample_batch(phase.ds, phase.cfg.batch_size, &mut phase.rng)?;
        match phase.explore {
            Some(sched) if sched.is_exploration_step(t) => {
                let model = phase.model;
                let event = exploration_step(
                    &mut self.table,
                    &mut self.mask,
                    &mut self.opt,
                    &sched,
                    t,
                    |table| model.bpr_loss_and_grad(table, None, &batch).map(|(_, g)| g),
                )?;
                if event.gradient_evaluated {
                    self.meter.dense_step();
                }
                self.events.push(event);
            }
            _ => {
                // Inactive weights are held at exactly zero, so the table is
                // already its own masked copy.
                let loss = phase.model.loss_and_grad(&self.table, None, &batch, grad)?;
                masked_step(&mut self.table, grad, &self.mask, &mut self.opt)?;
                self.meter.sparse_step();
                self.losses.push(loss);
            }
        }
        Ok(())
    }

    fn run(mut self, mut phase: Phase<'_>) -> Result<State> {
        let every = phase.cfg.eval_interval();
        let mut grad = Gradient::for_table(&self.table);
        if let Err(e) = self.snapshot(&phase, 0) {
            return Err(self.abort(phase.offset, e, phase.cfg));
        }
        for t in 1..=phase.iterations {
            let step = self.iterate(&mut phase, t, &mut grad);
            let step = step.and_then(|_| {
                if t % every == 0 || t == phase.iterations {
                    self.snapshot(&phase, t)
                } else {
                    Ok(())
                }
            });
            if let Err(e) = step {
                return Err(self.abort(phase.offset + t, e, phase.cfg));
            }
        }
        Ok(self)
    }
}

fn initial_table(cfg: &RunConfig, ds: &InteractionDataset, rng: &mut ChaCha8Rng) -> EmbeddingTable {
    EmbeddingTable::random_normal(ds.num_users(), ds.num_items(), cfg.dim, cfg.init_std, rng)
}

fn fresh_state(
    cfg: &RunConfig,
    table: EmbeddingTable,
    mask: SparseMask,
    forward: f64,
    s: f64,
) -> State {
    let opt = OptimizerState::new(cfg.optimizer, cfg.lr, table.len());
    let last_good = Checkpoint::capture(&table, &mask);
    State {
        table,
        mask,
        opt,
        meter: CostMeter::new(forward, s),
        log: Vec::new(),
        events: Vec::new(),
        losses: Vec::new(),
        last_good,
    }
}

fn outcome(
    cfg: &RunConfig,
    state: State,
    s: f64,
    ds: &InteractionDataset,
    model: &Model,
) -> TrainOutcome {
    let cost = CostReport {
        macs_train: state.meter.total(),
        macs_infer: inference_macs(cfg, ds, model, s),
        memory_bytes: cost::memory_bytes(
            state.mask.active_count(),
            state.mask.len(),
            cfg.method != Method::Dense,
        ),
    };
    TrainOutcome {
        config: cfg.clone(),
        table: state.table,
        mask: state.mask,
        log: state.log,
        events: state.events,
        losses: state.losses,
        cost,
    }
}

/// Trains according to `cfg.method` for exactly `t_end` iterations (plus
/// fine-tuning for OMP). Deterministic given the seed.
pub fn train(cfg: &RunConfig, ds: &InteractionDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.method == Method::Omp {
        return run_omp_pipeline(cfg, ds);
    }
    let model = Model::new(cfg.backbone_config(), ds, cfg.reg);
    let s = cfg.effective_sparsity();
    let mut init_rng = rng_stream(cfg.seed, STREAM_INIT);
    let mut table = initial_table(cfg, ds, &mut init_rng);
    let mask = match cfg.method {
        Method::Dense => SparseMask::all_active(table.rows(), table.dim()),
        _ => random_prune_once(&mut table, s, &mut init_rng)?,
    };
    let phase = Phase {
        cfg,
        ds,
        model: &model,
        sparsity: s,
        explore: (cfg.method == Method::Dsl).then(|| cfg.schedule()),
        iterations: cfg.t_end,
        offset: 0,
        rng: rng_stream(cfg.seed, STREAM_BATCHES),
    };
    let state = fresh_state(cfg, table, mask, forward_macs(cfg, &model), s).run(phase)?;
    Ok(outcome(cfg, state, s, ds, &model))
}

/// Dense training, one-shot magnitude pruning at `cfg.sparsity`, then
/// static sparse fine-tuning. Reuses the dense checkpoint when it exists and
/// writes it otherwise.
pub fn run_omp_pipeline(cfg: &RunConfig, ds: &InteractionDataset) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.method != Method::Omp {
        return Err(Error::InvalidConfig(
            "one-shot pipeline needs method omp".into(),
        ));
    }
    let model = Model::new(cfg.backbone_config(), ds, cfg.reg);
    let forward = forward_macs(cfg, &model);
    let dense_cfg = RunConfig {
        method: Method::Dense,
        dense_checkpoint: None,
        ..cfg.clone()
    };
    let path = cfg.dense_checkpoint.as_deref().expect("validated above");
    let mut table = if path.exists() {
        let (table, _) = Checkpoint::load(path)?.restore()?;
        if table.shape() != (ds.num_users() + ds.num_items(), cfg.dim) {
            return Err(Error::Checkpoint(format!(
                "{} does not match the dataset and dimension",
                path.display()
            )));
        }
        table
    } else {
        let dense = train(&dense_cfg, ds)?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        dense.checkpoint().save(path)?;
        dense.table
    };
    let dense_macs = cost::macs_training(forward, cfg.t_end, 0, 0.0);

    let s = cfg.sparsity;
    let mask = one_shot_magnitude_prune(&table, s)?;
    apply_mask(&mut table, &mask)?;
    let mut state = fresh_state(cfg, table, mask, forward, s);
    state.meter.add(dense_macs);
    let phase = Phase {
        cfg,
        ds,
        model: &model,
        sparsity: s,
        explore: None,
        iterations: cfg.finetune_len(),
        offset: cfg.t_end,
        rng: rng_stream(cfg.seed, STREAM_FINETUNE),
    };
    let state = state.run(phase)?;
    Ok(outcome(cfg, state, s, ds, &model))
}

pub fn metrics_rows(run_id: &str, log: &[LogRecord]) -> Vec<MetricsRow> {
    log.iter()
        .map(|r| MetricsRow {
            run_id: run_id.to_string(),
            iteration: r.iteration,
            k: r.metrics.k,
            recall: r.metrics.recall,
            ndcg: r.metrics.ndcg,
            hr: r.metrics.hr,
            sparsity: r.sparsity,
            macs_train_cum: r.macs_train_cum,
            macs_infer: r.macs_infer,
        })
        .collect()
}

pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

#[derive(Serialize)]
struct EventLine {
    t: usize,
    rho_t: f64,
    pruned: serde_json::Value,
    grown: serde_json::Value,
    sparsity_after: f64,
}

pub fn write_exploration_log(
    path: &Path,
    events: &[ExplorationEvent],
    verbose: bool,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for ev in events {
        let list = |v: &Vec<usize>| {
            if verbose {
                serde_json::json!(v)
            } else {
                serde_json::json!(v.len())
            }
        };
        let line = EventLine {
            t: ev.t,
            rho_t: ev.rho_t,
            pruned: list(&ev.pruned),
            grown: list(&ev.grown),
            sparsity_after: ev.sparsity_after,
        };
        serde_json::to_writer(&mut out, &line)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn write_config(path: &Path, cfg: &RunConfig) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(cfg)? + "\n")?;
    Ok(())
}

pub fn read_config(path: &Path) -> Result<RunConfig> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Writes the run directory: resolved config, metrics, exploration log,
/// final checkpoint and (when known) the split manifest.
pub fn write_run_dir(
    dir: &Path,
    outcome: &TrainOutcome,
    manifest: Option<&SplitManifest>,
    verbose_events: bool,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_config(&dir.join(CONFIG_FILE), &outcome.config)?;
    write_metrics_csv(&dir.join(METRICS_FILE), &outcome.metrics_rows())?;
    write_exploration_log(&dir.join(EXPLORATION_FILE), &outcome.events, verbose_events)?;
    outcome.checkpoint().save(&dir.join(CHECKPOINT_FILE))?;
    if let Some(m) = manifest {
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(m)? + "\n",
        )?;
    }
    Ok(())
}

/// Persists what an aborted run had produced, including the last snapshot
/// that evaluated cleanly.
pub fn write_aborted_run(
    dir: &Path,
    aborted: &AbortedRun,
    manifest: Option<&SplitManifest>,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_config(&dir.join(CONFIG_FILE), &aborted.config)?;
    write_metrics_csv(
        &dir.join(METRICS_FILE),
        &metrics_rows(&aborted.config.run_id, &aborted.log),
    )?;
    write_exploration_log(&dir.join(EXPLORATION_FILE), &aborted.events, false)?;
    aborted.last_good.save(&dir.join(LAST_GOOD_FILE))?;
    if let Some(m) = manifest {
        fs::write(
            dir.join(MANIFEST_FILE),
            serde_json::to_string_pretty(m)? + "\n",
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::{generate, SyntheticConfig};

    fn tiny_dataset() -> InteractionDataset {
        let cfg = SyntheticConfig {
            num_users: 60,
            num_items: 80,
            interactions: 1500,
            ..SyntheticConfig::default()
        };
        crate::data::split_holdout(&generate(&cfg).unwrap(), 0.2, 1).unwrap()
    }

    fn tiny_config(method: Method) -> RunConfig {
        RunConfig {
            method,
            dim: 8,
            t_end: 60,
            delta_t: 10,
            batch_size: 64,
            lr: 0.01,
            eval_every: Some(20),
            ..RunConfig::default()
        }
    }

    #[test]
    fn runs_exactly_t_end_iterations() {
        let ds = tiny_dataset();
        let out = train(&tiny_config(Method::Dsl), &ds).unwrap();
        let iters: Vec<usize> = out.log.iter().map(|r| r.iteration).collect();
        assert_eq!(iters, vec![0, 20, 40, 60]);
        let ts: Vec<usize> = out.events.iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![10, 20, 30, 40, 50]);
        assert_eq!(out.losses.len(), 60 - 5);
    }

    #[test]
    fn zero_ratio_keeps_initial_mask() {
        let ds = tiny_dataset();
        let cfg = RunConfig {
            rho0: 0.0,
            ..tiny_config(Method::Dsl)
        };
        let out = train(&cfg, &ds).unwrap();
        let mut rng = rng_stream(cfg.seed, STREAM_INIT);
        let mut table = initial_table(&cfg, &ds, &mut rng);
        let initial = random_prune_once(&mut table, cfg.sparsity, &mut rng).unwrap();
        assert_eq!(out.mask, initial);
    }

    #[test]
    fn dense_mask_stays_full() {
        let ds = tiny_dataset();
        let cfg = RunConfig {
            sparsity: 0.7,
            ..tiny_config(Method::Dense)
        };
        let out = train(&cfg, &ds).unwrap();
        assert_eq!(out.mask.inactive_count(), 0);
        assert!(out.log.iter().all(|r| r.sparsity == 0.0));
        assert!(out.events.is_empty());
    }

    #[test]
    fn dense_equals_unpruned_static_run() {
        let ds = tiny_dataset();
        let dense = train(&tiny_config(Method::Dense), &ds).unwrap();
        let rp0 = train(
            &RunConfig {
                sparsity: 0.0,
                ..tiny_config(Method::Rp)
            },
            &ds,
        )
        .unwrap();
        assert_eq!(dense.metrics_rows(), rp0.metrics_rows());
        assert_eq!(dense.table, rp0.table);
    }

    #[test]
    fn omp_requires_checkpoint_path() {
        let ds = tiny_dataset();
        assert!(matches!(
            train(&tiny_config(Method::Omp), &ds),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn omp_with_zero_sparsity_starts_from_dense_model() {
        let ds = tiny_dataset();
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig {
            sparsity: 0.0,
            finetune_iters: Some(0),
            dense_checkpoint: Some(dir.path().join("dense.json")),
            ..tiny_config(Method::Omp)
        };
        let omp = train(&cfg, &ds).unwrap();
        let dense = train(&tiny_config(Method::Dense), &ds).unwrap();
        assert_eq!(omp.table, dense.table);
        assert!(omp.cost.macs_train >= dense.cost.macs_train);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let ds = tiny_dataset();
        for cfg in [
            RunConfig {
                dim: 0,
                ..tiny_config(Method::Dsl)
            },
            RunConfig {
                lr: 0.0,
                ..tiny_config(Method::Dsl)
            },
            RunConfig {
                sparsity: 1.0,
                ..tiny_config(Method::Dsl)
            },
            RunConfig {
                delta_t: 0,
                ..tiny_config(Method::Dsl)
            },
            RunConfig {
                rho0: 2.0,
                ..tiny_config(Method::Dsl)
            },
        ] {
            assert!(train(&cfg, &ds).is_err(), "{cfg:?}");
        }
    }

    #[test]
    fn divergence_aborts_with_last_good_checkpoint() {
        let ds = tiny_dataset();
        let cfg = RunConfig {
            optimizer: OptimizerKind::Sgd,
            lr: 1e200,
            init_std: 1.0,
            reg: 0.0,
            eval_every: Some(1),
            ..tiny_config(Method::Dense)
        };
        match train(&cfg, &ds) {
            Err(Error::Aborted(run)) => {
                assert!(run.iteration >= 1);
                let (table, _) = run.last_good.restore().unwrap();
                assert!(table.weights().iter().all(|w| w.is_finite()));
            }
            other => panic!("expected abort, got {:?}", other.map(|o| o.log.len())),
        }
    }

    #[test]
    fn method_and_config_parse() {
        assert_eq!("rp".parse::<Method>(), Ok(Method::Rp));
        let cfg: RunConfig = serde_json::from_str(r#"{"method":"omp","sparsity":0.8}"#).unwrap();
        assert_eq!(cfg.method, Method::Omp);
        assert_eq!(cfg.sparsity, 0.8);
        assert_eq!(cfg.dim, 64);
        assert!(serde_json::from_str::<RunConfig>(r#"{"bogus":1}"#).is_err());
    }
}
