use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use noisebalance::exec::init_thread_pool;
use noisebalance_cli::commands;
use noisebalance_cli::config::RunConfig;
use noisebalance_cli::{exit_code, EXIT_USAGE};

/// Long-tailed classification with pure-noise oversampling.
#[derive(Parser, Debug)]
#[command(name = "noisebalance", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// JSON run configuration; omitted keys take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command (data seed for gen-data, training
    /// seed for train, probe seed for probe, the seed list for multi-seed
    /// commands).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Allow writing into a nonempty output directory.
    #[arg(long, global = true)]
    force: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic long-tailed train split and balanced test split.
    GenData,
    /// Print class counts and channel statistics of a dataset file or directory.
    Stats {
        /// A dataset file, or a directory holding train.ilsb and test.ilsb.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train one model and write metrics.csv, final.json and model.ckpt.
    Train {
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
    },
    /// Evaluate a checkpoint on the test split.
    Eval {
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Model file written by train.
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Compare normalization variants under identical noise settings and seeds.
    AblateNorm {
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Also run standard BN without noise (delta = 0).
        #[arg(long)]
        baseline: bool,
    },
    /// Replace pure noise by additive Gaussian noise of several strengths.
    SweepNoise {
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated noise levels, overriding experiment.sigmas.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Per-class gradient statistics of the final layer, with and without noise.
    Probe {
        /// Directory written by gen-data.
        #[arg(long)]
        data: PathBuf,
        /// Model file written by train.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Reuse the first probe batch for every probe step.
        #[arg(long)]
        repeat: bool,
    },
}

fn required_out(common: &Common) -> Result<PathBuf> {
    common.out.clone().context("--out <dir> is required for this command")
}

fn run(cli: Cli) -> Result<()> {
    let c = &cli.common;
    let mut cfg = RunConfig::load_or_default(c.config.as_deref())?;
    match &cli.command {
        Command::GenData => {
            if let Some(s) = c.seed {
                cfg.data.seed = s;
            }
            commands::gen_data(&cfg, &required_out(c)?, c.force)
        }
        Command::Stats { data } => commands::stats(data, c.out.as_deref(), c.force),
        Command::Train { data } => {
            if let Some(s) = c.seed {
                cfg.train.seed = s;
            }
            commands::train_cmd(&cfg, data, &required_out(c)?, c.force)
        }
        Command::Eval { data, checkpoint } => commands::eval_cmd(&cfg, data, checkpoint, &required_out(c)?, c.force),
        Command::AblateNorm { data, baseline } => {
            if let Some(s) = c.seed {
                cfg.experiment.seeds = vec![s];
            }
            commands::ablate_norm(&cfg, data, &required_out(c)?, c.force, *baseline)
        }
        Command::SweepNoise { data, sigmas } => {
            if let Some(s) = c.seed {
                cfg.experiment.seeds = vec![s];
            }
            if let Some(s) = sigmas {
                cfg.experiment.sigmas = s.clone();
            }
            commands::sweep_noise(&cfg, data, &required_out(c)?, c.force)
        }
        Command::Probe { data, checkpoint, repeat } => {
            if let Some(s) = c.seed {
                cfg.experiment.probe_seed = s;
            }
            commands::probe(&cfg, data, checkpoint, &required_out(c)?, c.force, *repeat)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    if let Some(n) = std::env::var("NOISEBALANCE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        init_thread_pool(n);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
