//! Command-line runner for closed-loop bias experiments.
//!
//! Every command reads a JSON experiment config and writes its artifacts to
//! the output directory. `analyze` encodes the verdict in its exit status:
//! 0 convergent, 2 divergent, 3 inconclusive, 1 on any error.

mod commands;
mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use fo_bias::stability::Verdict;

use commands::Model;
use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "fo-bias", version, about = "Closed-loop identification bias in feedback optimization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; falls back to `outputs.dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `estimation.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Evaluate condition (C) for the asymptotic model and write condition.json.
    Analyze(Common),
    /// Estimate the sensitivity and write estimate.json (and dataset.csv when fitted).
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fitted")]
        model: Model,
    },
    /// Run OAG with the chosen model and write trajectory.csv and trajectory.json.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "fitted")]
        model: Model,
    },
    /// Sweep the disturbance level and write sweep.csv and threshold.json.
    Sweep(Common),
}

fn prepare(common: &Common) -> Result<(ExperimentConfig, PathBuf)> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.estimation.seed = seed;
    }
    let out = match (&common.out, &cfg.outputs) {
        (Some(dir), _) => dir.clone(),
        (None, Some(o)) => Path::new(&o.dir).to_path_buf(),
        (None, None) => anyhow::bail!("no output directory: pass --out or set outputs.dir"),
    };
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((cfg, out))
}

fn run(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Analyze(common) => {
            let (cfg, out) = prepare(&common)?;
            let verdict = commands::analyze(&cfg, &out)?;
            println!("{}", verdict.as_str());
            Ok(match verdict {
                Verdict::ConvergentC => 0,
                Verdict::DivergentCPrime => 2,
                Verdict::Inconclusive => 3,
            })
        }
        Command::Estimate { common, model } => {
            let (cfg, out) = prepare(&common)?;
            commands::estimate_cmd(&cfg, &out, model)?;
            Ok(0)
        }
        Command::Simulate { common, model } => {
            let (cfg, out) = prepare(&common)?;
            let converged = commands::simulate(&cfg, &out, model)?;
            println!("{}", if converged { "converged" } else { "not converged" });
            Ok(0)
        }
        Command::Sweep(common) => {
            let (cfg, out) = prepare(&common)?;
            commands::sweep(&cfg, &out)?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
