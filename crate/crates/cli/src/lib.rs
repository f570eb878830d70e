//! Command-line front end: argument parsing, config resolution and report
//! output around the experiments in [`commands`].

pub mod commands;
pub mod config;
pub mod error;
pub mod output;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

use crate::config::{Command, ExperimentConfig, Format, Overrides, ReferenceKind};
use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "sgld",
    version,
    about = "SGLD experiments for quantile, VaR/CVaR and portfolio problems"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Track a quantile of a data stream (AR(1) by default).
    Quantile(Flags),
    /// Joint VaR/CVaR estimation over independent chains.
    VarCvar(Flags),
    /// Two-asset CVaR portfolio over independent chains.
    Portfolio(Flags),
    /// Wasserstein-1 error against step size, with a log-log slope.
    Rate(Flags),
    /// Grid-search reference for the two-asset portfolio.
    OracleGrid(Flags),
}

impl CliCommand {
    fn split(self) -> (Command, Flags) {
        match self {
            CliCommand::Quantile(f) => (Command::Quantile, f),
            CliCommand::VarCvar(f) => (Command::VarCvar, f),
            CliCommand::Portfolio(f) => (Command::Portfolio, f),
            CliCommand::Rate(f) => (Command::Rate, f),
            CliCommand::OracleGrid(f) => (Command::OracleGrid, f),
        }
    }
}

/// Flags shared by every command. Anything left unset falls back to the
/// config file, then to the command's defaults.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// TOML file of flag-named keys, or a JSON report to re-run.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Objective for `rate`: quantile, var-cvar or portfolio.
    #[arg(long)]
    pub objective: Option<String>,
    /// Data law, e.g. `normal:0,1`, `t:3`, `ar1:0.5`. Repeat for portfolio assets.
    #[arg(long)]
    pub dist: Option<Vec<String>>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub beta: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub iters: Option<u64>,
    #[arg(long)]
    pub burn_in: Option<u64>,
    #[arg(long)]
    pub chains: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Confidence level.
    #[arg(long)]
    pub qbar: Option<f64>,
    /// Initial point, comma separated.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    pub theta0: Option<Vec<f64>>,
    /// Record every `stride`-th post-burn-in iterate.
    #[arg(long)]
    pub stride: Option<u64>,
    /// Grid points for the portfolio reference.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Monte Carlo draws for the grid reference.
    #[arg(long)]
    pub mc_samples: Option<usize>,
    /// Fresh draws per chain for the CVaR read-out.
    #[arg(long)]
    pub readout_samples: Option<usize>,
    /// Step sizes for `rate`, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub lambdas: Option<Vec<f64>>,
    /// Continuous time per step size for `rate`; iterations are ceil(T / lambda).
    #[arg(long)]
    pub horizon: Option<f64>,
    #[arg(long, value_enum)]
    pub reference: Option<ReferenceKind>,
    #[arg(long)]
    pub reference_lambda: Option<f64>,
    #[arg(long)]
    pub reference_seed: Option<u64>,
    /// Output path. Without it a JSON summary goes to stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Raise chain counts to 10000 (5000 for `rate`).
    #[arg(long)]
    pub paper_scale: bool,
}

impl Flags {
    fn overrides(&self) -> Overrides {
        Overrides {
            command: None,
            objective: self.objective.clone(),
            dist: self.dist.clone(),
            lambda: self.lambda,
            beta: self.beta,
            gamma: self.gamma,
            iters: self.iters,
            burn_in: self.burn_in,
            chains: self.chains,
            seed: self.seed,
            qbar: self.qbar,
            theta0: self.theta0.clone(),
            stride: self.stride,
            grid: self.grid,
            mc_samples: self.mc_samples,
            readout_samples: self.readout_samples,
            lambdas: self.lambdas.clone(),
            horizon: self.horizon,
            reference: self.reference,
            reference_lambda: self.reference_lambda,
            reference_seed: self.reference_seed,
            out: self.out.clone(),
            format: self.format,
            paper_scale: self.paper_scale.then_some(true),
        }
    }
}

/// Resolves the config for a parsed command line.
pub fn resolve(cli: Cli) -> Result<ExperimentConfig, CliError> {
    let (command, flags) = cli.command.split();
    let file = match &flags.config {
        Some(path) => Overrides::from_file(path)?,
        None => Overrides::default(),
    };
    ExperimentConfig::resolve(command, file.merged(flags.overrides()))
}

/// Runs a parsed command line and writes its report.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve(cli)?;
    log::info!("running `{}` with seed {}", cfg.command, cfg.seed);
    let report = commands::run(&cfg)?;
    output::write(&report, &cfg)
}
