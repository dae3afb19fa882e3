use std::path::{Path, PathBuf};

use clap::Args;
use dynsparse::data::{load_split, InteractionDataset, SplitManifest};
use dynsparse::embedding::OptimizerKind;
use dynsparse::exploration::Decay;
use dynsparse::models::BackboneKind;
use dynsparse::trainer::{self, Method, RunConfig, TrainOutcome};
use dynsparse::Error;

use crate::failure::Failure;

/// Per-field overrides; anything given here beats the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    /// Prepared split directory (output of `prepare`).
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub run_id: Option<String>,
    /// dsl, dense, rp or omp.
    #[arg(long)]
    pub method: Option<Method>,
    /// mf or lightgcn.
    #[arg(long)]
    pub backbone: Option<BackboneKind>,
    /// LightGCN propagation layers.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Embedding dimension.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Fraction of embedding entries held at zero.
    #[arg(long)]
    pub sparsity: Option<f64>,
    /// Initial update ratio.
    #[arg(long)]
    pub rho0: Option<f64>,
    /// Iterations between exploration events.
    #[arg(long)]
    pub delta_t: Option<usize>,
    /// Total training iterations.
    #[arg(long)]
    pub t_end: Option<usize>,
    /// cosine, linear or none.
    #[arg(long)]
    pub decay: Option<Decay>,
    /// adam or sgd.
    #[arg(long)]
    pub optimizer: Option<OptimizerKind>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// L2 regularization strength.
    #[arg(long)]
    pub reg: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Evaluation interval in iterations (defaults to delta-t).
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Ranking cutoff K.
    #[arg(long)]
    pub eval_k: Option<usize>,
    /// Standard deviation of the initial embeddings.
    #[arg(long)]
    pub init_std: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Dense checkpoint reused (or written) by method omp.
    #[arg(long)]
    pub dense_checkpoint: Option<PathBuf>,
    /// Sparse fine-tuning iterations for method omp (defaults to t-end/4).
    #[arg(long)]
    pub finetune_iters: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, cfg: &mut RunConfig) {
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field { cfg.$field = v.clone(); })*
            };
        }
        set!(
            run_id, method, backbone, layers, dim, sparsity, rho0, delta_t, t_end, decay,
            optimizer, lr, reg, batch_size, eval_k, init_std, seed
        );
        if self.data.is_some() {
            cfg.data = self.data.clone();
        }
        if self.eval_every.is_some() {
            cfg.eval_every = self.eval_every;
        }
        if self.dense_checkpoint.is_some() {
            cfg.dense_checkpoint = self.dense_checkpoint.clone();
        }
        if self.finetune_iters.is_some() {
            cfg.finetune_iters = self.finetune_iters;
        }
    }
}

#[derive(Args)]
pub struct TrainArgs {
    /// JSON run config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Record pruned/grown positions in exploration.jsonl instead of counts.
    #[arg(long)]
    pub verbose_events: bool,
    #[command(flatten)]
    pub overrides: Overrides,
}

/// Resolved configuration plus whether sparsity was set explicitly.
pub fn resolve(config: Option<&Path>, overrides: &Overrides) -> Result<(RunConfig, bool), Failure> {
    let (mut cfg, mut sparsity_set) = match config {
        None => (RunConfig::default(), false),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                Failure::Usage(format!("cannot read config {}: {e}", path.display()))
            })?;
            let bad = |e: serde_json::Error| {
                Failure::Usage(format!("invalid config {}: {e}", path.display()))
            };
            let raw: serde_json::Value = serde_json::from_str(&text).map_err(bad)?;
            let cfg: RunConfig = serde_json::from_value(raw.clone()).map_err(bad)?;
            (cfg, raw.get("sparsity").is_some())
        }
    };
    overrides.apply(&mut cfg);
    sparsity_set |= overrides.sparsity.is_some();
    cfg.validate()?;
    Ok((cfg, sparsity_set))
}

pub fn load_data(cfg: &RunConfig) -> Result<(InteractionDataset, SplitManifest), Failure> {
    let dir = cfg.data.as_ref().ok_or_else(|| {
        Failure::Usage("no dataset given: pass --data or set \"data\" in the config".into())
    })?;
    load_split(dir)
        .map_err(|e| Failure::Usage(format!("cannot load dataset {}: {e}", dir.display())))
}

/// Trains and writes the run directory, or the aborted-run artifacts.
pub fn execute(
    cfg: &RunConfig,
    ds: &InteractionDataset,
    manifest: &SplitManifest,
    out: &Path,
    verbose_events: bool,
) -> Result<TrainOutcome, Failure> {
    match trainer::train(cfg, ds) {
        Ok(outcome) => {
            trainer::write_run_dir(out, &outcome, Some(manifest), verbose_events)?;
            Ok(outcome)
        }
        Err(Error::Aborted(aborted)) => {
            trainer::write_aborted_run(out, &aborted, Some(manifest))?;
            Err(Failure::Runtime(format!(
                "training aborted at iteration {}: {}; last good checkpoint kept in {}",
                aborted.iteration,
                aborted.cause,
                out.join(trainer::LAST_GOOD_FILE).display()
            )))
        }
        Err(e) => Err(e.into()),
    }
}

pub fn summary_line(outcome: &TrainOutcome) -> String {
    let m = outcome.final_metrics();
    format!(
        "{} {}: recall@{k}={:.4} ndcg@{k}={:.4} hr@{k}={:.4} sparsity={:.4} macs_train={:.4e} macs_infer={:.4e} memory={}B",
        outcome.config.run_id,
        outcome.config.method,
        m.recall,
        m.ndcg,
        m.hr,
        outcome.mask.sparsity(),
        outcome.cost.macs_train,
        outcome.cost.macs_infer,
        outcome.cost.memory_bytes,
        k = m.k,
    )
}

pub fn train(args: TrainArgs) -> Result<(), Failure> {
    let (cfg, sparsity_set) = resolve(args.config.as_deref(), &args.overrides)?;
    if cfg.method == Method::Dense && sparsity_set {
        log::warn!(
            "method dense ignores sparsity {} and trains the full table",
            cfg.sparsity
        );
    }
    let (ds, manifest) = load_data(&cfg)?;
    let outcome = execute(&cfg, &ds, &manifest, &args.out, args.verbose_events)?;
    println!("{}", summary_line(&outcome));
    Ok(())
}
