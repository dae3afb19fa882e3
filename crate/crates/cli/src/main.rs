//! `dynsparse` command-line front end.
//!
//! Exit codes: 0 on success, 1 when a run aborts or fails at runtime, 2 on
//! usage and configuration errors.

mod failure;
mod inspect;
mod run;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use dynsparse::data::InputFormat;

use failure::Failure;

#[derive(Parser)]
#[command(
    name = "dynsparse",
    version,
    about = "Dynamic sparse training for embedding-based recommenders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split an interaction file into train/test with a manifest.
    Prepare(PrepareArgs),
    /// Train one model and write its run directory.
    Train(Box<run::TrainArgs>),
    /// Run a methods x sparsities x seeds grid and aggregate the results.
    Sweep(sweep::SweepArgs),
    /// Per-group embedding sparsity by popularity for a finished run.
    Profile(inspect::ProfileArgs),
    /// Tabulate final metrics of run directories or sweeps.
    Report(inspect::ReportArgs),
    /// Generate a synthetic interaction file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct PrepareArgs {
    /// Raw interaction file.
    #[arg(long)]
    input: PathBuf,
    /// pair-lines (`user item` per line) or per-user-adjacency (`user item item ...`).
    #[arg(long, default_value = "pair-lines")]
    format: InputFormat,
    /// Fraction of each user's interactions held out for test.
    #[arg(long, default_value_t = 0.2)]
    ratio: f64,
    #[arg(long, default_value_t = 2024)]
    seed: u64,
    /// Output directory for train.txt, test.txt and split_manifest.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// Output interaction file (pair-lines with a size header).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 943)]
    users: usize,
    #[arg(long, default_value_t = 1682)]
    items: usize,
    /// Approximate number of interactions.
    #[arg(long, default_value_t = 100_000)]
    interactions: usize,
    /// Power-law exponent of item popularity and user activity.
    #[arg(long, default_value_t = 0.8)]
    exponent: f64,
    /// Strength of the latent preference signal.
    #[arg(long, default_value_t = 2.0)]
    affinity: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
}

fn prepare(args: PrepareArgs) -> Result<(), Failure> {
    let parsed =
        dynsparse::data::read_interactions(&args.input, args.format).map_err(Failure::input)?;
    let split = dynsparse::data::split_holdout(&parsed.dataset, args.ratio, args.seed)?;
    let mut manifest = dynsparse::data::SplitManifest::describe(&split, args.seed, args.ratio);
    manifest.source = Some(args.input.display().to_string());
    dynsparse::data::save_split(&args.out, &split, &manifest)?;
    println!(
        "{} users, {} items: {} train / {} test edges ({} duplicates dropped) -> {}",
        split.num_users(),
        split.num_items(),
        manifest.train_edges,
        manifest.test_edges,
        parsed.duplicates_dropped,
        args.out.display()
    );
    Ok(())
}

fn synth(args: SynthArgs) -> Result<(), Failure> {
    let cfg = dynsparse::synthetic::SyntheticConfig {
        num_users: args.users,
        num_items: args.items,
        interactions: args.interactions,
        popularity_exponent: args.exponent,
        affinity: args.affinity,
        seed: args.seed,
        ..Default::default()
    };
    let ds = dynsparse::synthetic::generate(&cfg)?;
    if let Some(parent) = args.out.parent() {
        std::fs::create_dir_all(parent).map_err(dynsparse::Error::from)?;
    }
    dynsparse::data::write_pairs(&args.out, ds.num_users(), ds.num_items(), ds.train_edges())?;
    println!(
        "{} interactions -> {}",
        ds.train_edges().len(),
        args.out.display()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Prepare(a) => prepare(a),
        Command::Train(a) => run::train(*a),
        Command::Sweep(a) => sweep::sweep(a),
        Command::Profile(a) => inspect::profile(a),
        Command::Report(a) => inspect::report(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
