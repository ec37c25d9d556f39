//! `vecprobe`: trajectory-prediction workbench CLI.
//!
//! All run settings live in one flat config file; the only flags are the
//! config path and the three overrides (`--seed`, `--out`, `--jobs`).
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric
//! failure. `VECPROBE_LOG` sets the log level (error, warn, info, debug).

mod artifacts;
mod commands;
mod config;
mod error;

use std::path::PathBuf;

use clap::{Parser, Subcommand};

use config::{RawConfig, RunConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "vecprobe",
    version,
    about = "Vectorized-scene trajectory prediction workbench",
    after_long_help = config::DEFAULT_CONFIG_TEXT
)]
struct Cli {
    /// Run configuration file (`key = value` lines); defaults apply if omitted.
    #[arg(long, value_name = "PATH", global = true)]
    config: Option<PathBuf>,
    /// Root random seed; overrides the config file.
    #[arg(long, value_name = "N", global = true)]
    seed: Option<u64>,
    /// Artifact directory; overrides the config file.
    #[arg(long, value_name = "DIR", global = true)]
    out: Option<PathBuf>,
    /// Worker-thread cap for parallel stages (0 = all cores); overrides the config file.
    #[arg(long, value_name = "N", global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: CommandKind,
}

#[derive(Clone, Copy, Subcommand)]
enum CommandKind {
    /// Generate a synthetic scenario: tracks.csv, map.json, synth_manifest.json.
    Synth,
    /// Parse tracks and map, window into cases, split, and cache dataset.json.
    Ingest,
    /// Train a predictor on the dataset's training split; writes checkpoint.json.
    Train,
    /// Report minADE / minFDE / miss rate for both splits; writes metrics.json.
    Evaluate,
    /// Train-on-one, test-on-all generalization matrix over scenario dirs.
    Cross,
    /// Integrated-gradients attributions for test cases; CSV plus summary JSON.
    Attribute,
    /// Baseline-family NMSE sweep over the sigma grid; CSV plus JSON.
    Sweep,
    /// SVG scenes shaded by per-vector attribution relevance.
    Render,
}

impl CommandKind {
    fn name(self) -> &'static str {
        match self {
            CommandKind::Synth => "synth",
            CommandKind::Ingest => "ingest",
            CommandKind::Train => "train",
            CommandKind::Evaluate => "evaluate",
            CommandKind::Cross => "cross",
            CommandKind::Attribute => "attribute",
            CommandKind::Sweep => "sweep",
            CommandKind::Render => "render",
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let raw = match &cli.config {
        Some(path) => RawConfig::from_path(path)?,
        None => RawConfig::default(),
    };
    let mut cfg = RunConfig::from_raw(raw)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    if let Some(jobs) = cli.jobs {
        cfg.jobs = jobs;
    }
    if cfg.jobs > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("jobs = {}: {e}", cfg.jobs)))?;
    }
    log::info!(
        "{}: seed {}, config hash {}",
        cli.command.name(),
        cfg.seed,
        cfg.config_hash()
    );
    match cli.command {
        CommandKind::Synth => commands::synth(&cfg),
        CommandKind::Ingest => commands::ingest(&cfg),
        CommandKind::Train => commands::train_cmd(&cfg),
        CommandKind::Evaluate => commands::evaluate(&cfg),
        CommandKind::Cross => commands::cross(&cfg),
        CommandKind::Attribute => commands::attribute(&cfg),
        CommandKind::Sweep => commands::sweep(&cfg),
        CommandKind::Render => commands::render(&cfg),
    }
}

fn main() {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("VECPROBE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    if let Err(e) = run(cli) {
        eprintln!("vecprobe: {e}");
        std::process::exit(e.exit_code());
    }
}
