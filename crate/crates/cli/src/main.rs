//! `wfkit`: synthetic corpora, training, evaluation, tuning, explanation,
//! defenses and HTML fingerprintability from one TOML run config.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use wfkit::par::ExecMode;

use crate::commands::Ctx;
use crate::config::RunConfig;
use crate::output::Stamp;

const OUT_DIR_ENV: &str = "WFKIT_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "wfkit", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(short, long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config. Required for train, tune and eval.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides the config and $WFKIT_OUT_DIR.
    #[arg(short, long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for split iterations, trees and extraction; 1 runs
    /// sequentially.
    #[arg(short, long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Generate a synthetic trace corpus.
    Synth,
    /// Train one classifier and save it.
    Train,
    /// Repeated-split evaluation with metrics and a threshold sweep.
    Eval,
    /// Hyperparameter search.
    Tune,
    /// Autoencoder feature compression.
    Encode,
    /// Per-feature relevance of a trained classifier.
    Lrp,
    /// Apply a padding defense and report overhead.
    Defend,
    /// Extract HTML features from a page corpus.
    Htmlfeat,
    /// Predict site fingerprintability from HTML features.
    Fp,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::Synth => "synth",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Tune => "tune",
            Command::Encode => "encode",
            Command::Lrp => "lrp",
            Command::Defend => "defend",
            Command::Htmlfeat => "htmlfeat",
            Command::Fp => "fp",
        }
    }

    fn needs_seed_flag(self) -> bool {
        matches!(self, Command::Train | Command::Tune | Command::Eval)
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let cmd = cli.command;
    let seed = match (cli.seed, cmd.needs_seed_flag()) {
        (Some(s), _) => s,
        (None, true) => anyhow::bail!("--seed is required for {}", cmd.name()),
        (None, false) => cfg.seed.unwrap_or(0),
    };
    let jobs = cli
        .jobs
        .or(cfg.jobs)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, usize::from));
    anyhow::ensure!(jobs > 0, "--jobs: must be at least 1");
    if jobs > 1 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .context("starting worker pool")?;
    }
    let out_dir = cli
        .out
        .or_else(|| cfg.output_dir.clone())
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("wfkit-out"));

    let stamp = Stamp::new(cmd.name(), &cfg, seed)?;
    let ctx = Ctx {
        cfg,
        seed,
        mode: ExecMode::from_jobs(jobs),
        stamp,
    };
    log::info!("{} seed={} jobs={jobs} config_hash={}", cmd.name(), seed, ctx.stamp.config_hash);
    let staged = match cmd {
        Command::Synth => commands::synth(&ctx),
        Command::Train => commands::train_cmd(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Tune => commands::tune(&ctx),
        Command::Encode => commands::encode(&ctx),
        Command::Lrp => commands::lrp(&ctx),
        Command::Defend => commands::defend(&ctx),
        Command::Htmlfeat => commands::htmlfeat(&ctx),
        Command::Fp => commands::fp(&ctx),
    }?;
    for path in staged.commit(&out_dir)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
