//! `cascade` — trace-driven experiments for a two-tier model cascade with
//! deferral, abstention, and online threshold learning.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "cascade", version, about)]
struct Cli {
    /// Experiment config file (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config's `output_dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run with this single seed instead of the config's seed list.
    #[arg(long, global = true)]
    seed_override: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic trace file from the config's [synth] section.
    Synth,
    /// Accuracy/cost of probabilistic deferral with IBC and delta-IBC.
    CostBenefit,
    /// Stream the traces through every policy with online threshold updates.
    Online {
        /// Also run the grid-search baseline.
        #[arg(long)]
        grid: bool,
    },
    /// Cascade regret under increasing calibration-label corruption.
    ImperfectExpert,
}

fn run(cli: Cli) -> Result<()> {
    let config_path = cli
        .config
        .context("--config PATH is required (TOML experiment config)")?;
    let mut config = ExperimentConfig::load(&config_path)?;
    if let Some(seed) = cli.seed_override {
        config.seeds = vec![seed];
    }
    let out_dir = cli.out.clone().unwrap_or_else(|| config.output_dir.clone());
    match cli.command {
        Command::Synth => {
            commands::cmd_synth(&config, cli.out.as_deref(), config.seeds[0])?;
        }
        Command::CostBenefit => commands::cmd_cost_benefit(&config, &out_dir)?,
        Command::Online { grid } => commands::cmd_online(&config, &out_dir, grid)?,
        Command::ImperfectExpert => commands::cmd_imperfect_expert(&config, &out_dir)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
