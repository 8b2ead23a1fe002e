//! Command line front end: `search`, `deep-train`, `ablate-velocity`,
//! `selfcheck` and `eval`.
//!
//! Settings come from built-in defaults, then `--config FILE`, then `--set
//! key=value` pairs, then the dedicated flags; later sources win.

pub mod commands;
pub mod config;
pub mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use fcae_core::data::Split;

use crate::config::{ConfigError, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "fcae", version, about = "Particle swarm search over flexible convolutional auto-encoder architectures")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Flat `key = value` config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides a config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Concurrent fitness evaluations.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// mnist, cifar10 or synth:<kind>.
    #[arg(long, global = true)]
    pub dataset: Option<String>,
    /// cae or surrogate.
    #[arg(long, global = true)]
    pub mode: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SplitArg {
    Train,
    Test,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the architecture search and write its trajectory and gBest.
    Search,
    /// Deep-train one or two stacked architectures, optionally with the
    /// classifier head.
    DeepTrain {
        /// Architecture descriptor file (e.g. a search's gbest.arch); give
        /// twice for two stacked blocks.
        #[arg(long)]
        arch: Vec<PathBuf>,
    },
    /// Matched-seed searches with x-reference and gBest-reference velocity.
    AblateVelocity,
    /// Numeric checks of the tensor engine.
    Selfcheck {
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
    /// Score a checkpoint on a dataset split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
    },
}

/// Resolves the configuration from every source.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &g.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        cfg.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))?;
    }
    for pair in &g.set {
        cfg.apply_override(pair)?;
    }
    let flags = [
        ("run.seed", g.seed.map(|s| s.to_string())),
        ("run.jobs", g.jobs.map(|j| j.to_string())),
        ("data.dataset", g.dataset.clone()),
        ("run.mode", g.mode.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    Ok(cfg.finish()?)
}

fn need_out(g: &GlobalArgs) -> Result<&Path> {
    g.out
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid("--out DIR is required".into()).into())
}

/// Runs a parsed command line and maps the outcome to an exit status:
/// 0 on success, 1 when a run or check fails, 2 for configuration errors.
pub fn run(cli: Cli) -> ExitCode {
    match dispatch(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.downcast_ref::<ConfigError>().is_some()) {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<ExitCode> {
    let g = &cli.global;
    match &cli.command {
        Command::Selfcheck { inject_fault } => {
            let results = commands::selfcheck(inject_fault.clone())?;
            for r in &results {
                println!("{r}");
            }
            let failed: Vec<&str> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
            if failed.is_empty() {
                println!("selfcheck: all {} checks passed", results.len());
                Ok(ExitCode::SUCCESS)
            } else {
                eprintln!("selfcheck: {} failed: {}", failed.len(), failed.join(", "));
                Ok(ExitCode::FAILURE)
            }
        }
        Command::Search => {
            let cfg = resolve_config(g)?;
            let out = need_out(g)?;
            let r = commands::search(cfg, out)?;
            println!("gbest_fitness = {}", output::fmt_f64(r.outcome.gbest_fitness));
            print!("{}", r.gbest.to_descriptor());
            Ok(ExitCode::SUCCESS)
        }
        Command::DeepTrain { arch } => {
            let cfg = resolve_config(g)?;
            let out = need_out(g)?;
            commands::deep_train(cfg, arch, out)?;
            print!("{}", std::fs::read_to_string(out.join("metrics.txt"))?);
            Ok(ExitCode::SUCCESS)
        }
        Command::AblateVelocity => {
            let cfg = resolve_config(g)?;
            let out = need_out(g)?;
            commands::ablate_velocity(cfg, out)?;
            print!("{}", std::fs::read_to_string(out.join("summary.txt"))?);
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { checkpoint, split } => {
            let cfg = resolve_config(g)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Test => Split::Test,
            };
            print!("{}", commands::eval(cfg, checkpoint, split, g.out.as_deref())?);
            Ok(ExitCode::SUCCESS)
        }
    }
}
