//! `cmn` — train, score, and analyze a dialogue-response evaluation model
//! from a single run-configuration file.
//!
//! One subcommand per pipeline stage: `train`, `score`, `build-eval-set`,
//! `correlate`, `kappa`, `project`. Every artifact embeds the hash of the
//! effective configuration and the seeds in force, so any two outputs with
//! the same hash are directly comparable.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use commands::{Method, Mode};
use config::RunContext;

#[derive(Parser)]
#[command(
    name = "cmn",
    version,
    about = "Trainable automatic evaluation for open-domain dialogue responses",
    long_about = "Trainable automatic evaluation for open-domain dialogue responses.\n\n\
        All commands are driven by one config file (TOML, or JSON with a .json\n\
        extension) holding [model], [train], [eval] and [paths] sections.\n\
        Relative paths in [paths] resolve against the config file's directory.\n\
        The CMN_SEED environment variable overrides every seed in the file,\n\
        and --seed overrides both."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct CommonArgs {
    /// Run configuration file (TOML; JSON when the extension is .json).
    #[arg(long, value_name = "PATH")]
    config: PathBuf,

    /// Replace the model, train, and eval seeds with this value
    /// (takes precedence over CMN_SEED and the config file).
    #[arg(long, value_name = "INT")]
    seed: Option<u64>,

    /// Worker threads for parallel sections (default: one per core).
    /// Results are identical for every worker count.
    #[arg(long, value_name = "INT")]
    workers: Option<usize>,

    /// Write artifacts here instead of the configured paths.output_dir.
    #[arg(long, value_name = "PATH")]
    output_dir: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model on paths.corpus; writes the checkpoint, a step log,
    /// a frozen copy of the effective config, and a run manifest.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },

    /// Score candidate responses with the configured checkpoint; writes
    /// JSONL and CSV reports carrying all three score columns.
    Score {
        #[command(flatten)]
        common: CommonArgs,

        /// Pairs to score (JSONL with candidates). Defaults to paths.corpus.
        #[arg(long, value_name = "PATH")]
        pairs: Option<PathBuf>,

        /// Which score column the report summary highlights.
        #[arg(long, value_enum, default_value_t = Mode::Full)]
        mode: Mode,
    },

    /// Split a candidate-bearing corpus into the standard set (highest
    /// candidate-reference overlap) and the diverse set (overlap below a
    /// threshold); writes eval_sets.json.
    BuildEvalSet {
        #[command(flatten)]
        common: CommonArgs,

        /// Pairs to split (JSONL with candidates). Defaults to paths.corpus.
        #[arg(long, value_name = "PATH")]
        pairs: Option<PathBuf>,

        /// Size of the standard (top-overlap) set.
        #[arg(long, value_name = "INT", default_value_t = 200)]
        k_standard: usize,

        /// Unigram-overlap ceiling for the diverse set.
        #[arg(long, value_name = "FLOAT", default_value_t = 0.2)]
        threshold: f64,

        /// Size of the diverse set (fewer are kept when the pool is smaller).
        #[arg(long, value_name = "INT", default_value_t = 600)]
        k_diverse: usize,
    },

    /// Correlate a score report with aggregated human judgments, per split
    /// and per score variant; prints the table and writes correlations.csv.
    Correlate {
        #[command(flatten)]
        common: CommonArgs,

        /// Score report to read. Defaults to <output_dir>/scores.jsonl.
        #[arg(long, value_name = "PATH")]
        scores: Option<PathBuf>,

        /// eval_sets.json restricting the report to its saved splits.
        #[arg(long, value_name = "PATH")]
        eval_sets: Option<PathBuf>,

        /// Split to report: with --eval-sets, `standard` or `diverse`
        /// (default: both); otherwise a free-form label for the one split.
        #[arg(long, value_name = "NAME")]
        split: Option<String>,
    },

    /// Pairwise inter-annotator agreement (Cohen's kappa) over
    /// paths.annotations, as a symmetric matrix.
    Kappa {
        #[command(flatten)]
        common: CommonArgs,
    },

    /// Project posterior latent means of references (and candidates, when
    /// present) to 2-D; writes projection.csv.
    Project {
        #[command(flatten)]
        common: CommonArgs,

        /// Pairs to embed (JSONL). Defaults to paths.corpus.
        #[arg(long, value_name = "PATH")]
        pairs: Option<PathBuf>,

        /// Projection algorithm.
        #[arg(long, value_enum, default_value_t = Method::Pca)]
        method: Method,
    },
}

impl Command {
    fn common(&self) -> &CommonArgs {
        match self {
            Command::Train { common }
            | Command::Score { common, .. }
            | Command::BuildEvalSet { common, .. }
            | Command::Correlate { common, .. }
            | Command::Kappa { common }
            | Command::Project { common, .. } => common,
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let common = cli.command.common();
    if let Some(workers) = common.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
            .context("initializing the worker pool")?;
    }
    let env_seed = config::seed_from_env()?;
    let ctx = RunContext::prepare(
        &common.config,
        common.seed,
        env_seed,
        common.output_dir.as_deref(),
    )?;

    match &cli.command {
        Command::Train { .. } => commands::cmd_train(&ctx),
        Command::Score { pairs, mode, .. } => commands::cmd_score(&ctx, pairs.as_deref(), *mode),
        Command::BuildEvalSet {
            pairs,
            k_standard,
            threshold,
            k_diverse,
            ..
        } => commands::cmd_build_eval_set(&ctx, pairs.as_deref(), *k_standard, *threshold, *k_diverse),
        Command::Correlate {
            scores,
            eval_sets,
            split,
            ..
        } => commands::cmd_correlate(&ctx, scores.as_deref(), eval_sets.as_deref(), split.as_deref()),
        Command::Kappa { .. } => commands::cmd_kappa(&ctx),
        Command::Project { pairs, method, .. } => {
            commands::cmd_project(&ctx, pairs.as_deref(), *method)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::FAILURE
        }
    }
}
