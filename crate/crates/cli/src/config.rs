//! Experiment configuration: per-command defaults, a flat key-value config
//! file, and command-line overrides, resolved into one validated record.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sgld_core::distributions::{DistributionSpec, StreamSpec};
use sgld_core::objectives::ObjectiveKind;

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Quantile,
    VarCvar,
    Portfolio,
    Rate,
    OracleGrid,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Quantile => "quantile",
            Command::VarCvar => "var-cvar",
            Command::Portfolio => "portfolio",
            Command::Rate => "rate",
            Command::OracleGrid => "oracle-grid",
        }
    }
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Csv,
    Json,
}

/// Target distribution for rate experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceKind {
    /// Gaussian approximation of the target at the minimizer.
    #[default]
    Analytic,
    /// SGLD terminals at a finer step size.
    Sgld,
}

/// Partial settings, as read from a config file or the command line. Every
/// key is optional; unset keys fall back to the command's defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct Overrides {
    pub command: Option<Command>,
    pub objective: Option<String>,
    pub dist: Option<Vec<String>>,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub iters: Option<u64>,
    pub burn_in: Option<u64>,
    pub chains: Option<usize>,
    pub seed: Option<u64>,
    pub qbar: Option<f64>,
    pub theta0: Option<Vec<f64>>,
    pub stride: Option<u64>,
    pub grid: Option<usize>,
    pub mc_samples: Option<usize>,
    pub readout_samples: Option<usize>,
    pub lambdas: Option<Vec<f64>>,
    pub horizon: Option<f64>,
    pub reference: Option<ReferenceKind>,
    pub reference_lambda: Option<f64>,
    pub reference_seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub paper_scale: Option<bool>,
}

macro_rules! merge_fields {
    ($base:ident, $top:ident; $($f:ident),+) => {
        $( if $top.$f.is_some() { $base.$f = $top.$f; } )+
    };
}

impl Overrides {
    /// Fields set in `top` replace those in `self`.
    pub fn merged(mut self, top: Overrides) -> Overrides {
        merge_fields!(self, top; command, objective, dist, lambda, beta, gamma, iters, burn_in, chains, seed,
            qbar, theta0, stride, grid, mc_samples, readout_samples, lambdas, horizon, reference,
            reference_lambda, reference_seed, out, format, paper_scale);
        self
    }

    /// Reads a TOML file of flag-named keys, or a JSON report whose embedded
    /// `config` is used verbatim.
    pub fn from_file(path: &Path) -> Result<Overrides, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
        if path.extension().is_some_and(|e| e == "json") {
            let value: serde_json::Value = serde_json::from_str(&text)
                .map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))?;
            let config = value.get("config").cloned().unwrap_or(value);
            serde_json::from_value(config).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))
        } else {
            toml::from_str(&text).map_err(|e| CliError::config("config", format!("{}: {e}", path.display())))
        }
    }
}

/// Fully resolved settings for one command. Serializes with the same keys
/// as [`Overrides`], so a report's embedded config can be fed back in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub struct ExperimentConfig {
    pub command: Command,
    pub objective: String,
    pub dist: Vec<String>,
    pub lambda: f64,
    pub beta: f64,
    pub gamma: f64,
    pub iters: u64,
    pub burn_in: u64,
    pub chains: usize,
    pub seed: u64,
    pub qbar: f64,
    pub theta0: Vec<f64>,
    pub stride: u64,
    pub grid: usize,
    pub mc_samples: usize,
    pub readout_samples: usize,
    pub lambdas: Vec<f64>,
    pub horizon: Option<f64>,
    pub reference: ReferenceKind,
    pub reference_lambda: f64,
    pub reference_seed: u64,
    pub out: Option<PathBuf>,
    pub format: Format,
    pub paper_scale: bool,
}

pub const DEFAULT_SEED: u64 = 1;
pub const DESK_CHAINS: usize = 1_000;
pub const PAPER_CHAINS: usize = 10_000;
pub const DESK_RATE_CHAINS: usize = 2_000;
pub const PAPER_RATE_CHAINS: usize = 5_000;
pub const DEFAULT_RATE_LAMBDAS: [f64; 4] = [2e-5, 5e-5, 1e-4, 2e-4];

fn default_dists(command: Command, objective: ObjectiveKind) -> Vec<String> {
    let kind = match command {
        Command::Quantile => ObjectiveKind::Quantile,
        Command::VarCvar => ObjectiveKind::VarCvar,
        Command::Portfolio | Command::OracleGrid => ObjectiveKind::Portfolio,
        Command::Rate => objective,
    };
    match kind {
        ObjectiveKind::Quantile => vec!["ar1:0.5".into()],
        ObjectiveKind::VarCvar if command == Command::Rate => vec!["t:3".into()],
        ObjectiveKind::VarCvar => vec!["normal:0,1".into()],
        ObjectiveKind::Portfolio => vec!["normal:1,2".into(), "normal:0,1".into()],
    }
}

/// Continuous-time horizon per step size for rate runs: a few relaxation
/// times of the drift near each default problem's minimizer.
fn default_horizon(objective: ObjectiveKind) -> f64 {
    match objective {
        ObjectiveKind::Quantile => 40.0,
        ObjectiveKind::VarCvar => 10.0,
        ObjectiveKind::Portfolio => 20.0,
    }
}

impl ExperimentConfig {
    /// Applies defaults for `command` to `o` and validates the result.
    pub fn resolve(command: Command, o: Overrides) -> Result<ExperimentConfig, CliError> {
        if let Some(c) = o.command {
            if c != command {
                return Err(CliError::config(
                    "command",
                    format!("config is for `{c}`, not `{command}`"),
                ));
            }
        }
        let objective = match (&o.objective, command) {
            (None, Command::Rate) => ObjectiveKind::Quantile,
            (None, other) => command_objective(other),
            (Some(name), _) => parse_objective(name)?,
        };
        if command != Command::Rate && objective != command_objective(command) {
            return Err(CliError::config(
                "objective",
                format!("`{command}` always uses the {} objective", command_objective(command)),
            ));
        }
        let rate_objective = objective;

        let paper_scale = o.paper_scale.unwrap_or(false);
        let quantile_like = rate_objective == ObjectiveKind::Quantile;
        let gamma_default = if quantile_like {
            sgld_core::objectives::DEFAULT_QUANTILE_GAMMA
        } else {
            sgld_core::objectives::DEFAULT_RISK_GAMMA
        };
        let chains_default = match (command, paper_scale) {
            (Command::Quantile, _) => 1,
            (Command::Rate, false) => DESK_RATE_CHAINS,
            (Command::Rate, true) => PAPER_RATE_CHAINS,
            (_, false) => DESK_CHAINS,
            (_, true) => PAPER_CHAINS,
        };
        let iters = o.iters.unwrap_or(1_000_000);
        let burn_in = o
            .burn_in
            .unwrap_or(if command == Command::Quantile { 10_000 } else { 0 });
        let seed = o.seed.unwrap_or(DEFAULT_SEED);
        let theta0 = o.theta0.clone().unwrap_or_else(|| match command {
            Command::Quantile => vec![3.0],
            Command::VarCvar => vec![0.0],
            Command::Portfolio | Command::OracleGrid => vec![0.0, 0.0, 0.0],
            // empty: warm start at the minimizer, filled in by the command
            Command::Rate => vec![],
        });
        let stride_default = match command {
            Command::Quantile => 100.min(iters.saturating_sub(burn_in).max(1)),
            _ => iters.saturating_sub(burn_in).max(1),
        };
        let horizon = match (command, o.horizon, o.iters) {
            (Command::Rate, Some(h), _) => Some(h),
            (Command::Rate, None, None) => Some(default_horizon(objective)),
            _ => None,
        };

        let cfg = ExperimentConfig {
            command,
            objective: objective.name().to_string(),
            dist: o.dist.clone().unwrap_or_else(|| default_dists(command, objective)),
            lambda: o.lambda.unwrap_or(1e-4),
            beta: o.beta.unwrap_or(1e8),
            gamma: o.gamma.unwrap_or(gamma_default),
            iters,
            burn_in,
            chains: o.chains.unwrap_or(chains_default),
            seed,
            qbar: o.qbar.unwrap_or(0.95),
            theta0,
            stride: o.stride.unwrap_or(stride_default),
            grid: o.grid.unwrap_or(100),
            mc_samples: o.mc_samples.unwrap_or(10_000_000),
            readout_samples: o.readout_samples.unwrap_or(1_000_000),
            lambdas: o.lambdas.clone().unwrap_or_else(|| DEFAULT_RATE_LAMBDAS.to_vec()),
            horizon,
            reference: o.reference.unwrap_or_default(),
            reference_lambda: o.reference_lambda.unwrap_or(1e-5),
            reference_seed: o.reference_seed.unwrap_or(seed.wrapping_add(1)),
            out: o.out.clone(),
            format: o.format.unwrap_or_default(),
            paper_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn objective_kind(&self) -> ObjectiveKind {
        parse_objective(&self.objective).expect("validated objective")
    }

    pub fn streams(&self) -> Vec<StreamSpec> {
        self.dist
            .iter()
            .map(|d| d.parse().expect("validated distribution"))
            .collect()
    }

    /// Marginal laws of the data streams.
    pub fn laws(&self) -> Vec<DistributionSpec> {
        self.streams().iter().map(StreamSpec::marginal).collect()
    }

    fn validate(&self) -> Result<(), CliError> {
        let positive = |field: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CliError::config(field, format!("must be positive and finite, got {v}")))
            }
        };
        positive("lambda", self.lambda)?;
        positive("beta", self.beta)?;
        positive("gamma", self.gamma)?;
        positive("reference-lambda", self.reference_lambda)?;
        if !(self.qbar > 0.0 && self.qbar < 1.0) {
            return Err(CliError::config(
                "qbar",
                format!("must lie in (0, 1), got {}", self.qbar),
            ));
        }
        if self.iters == 0 {
            return Err(CliError::config("iters", "must be at least 1"));
        }
        if self.burn_in >= self.iters {
            return Err(CliError::config(
                "burn-in",
                format!("must be below iters ({}), got {}", self.iters, self.burn_in),
            ));
        }
        if self.chains == 0 {
            return Err(CliError::config("chains", "must be at least 1"));
        }
        if self.stride == 0 || self.stride > self.iters - self.burn_in {
            return Err(CliError::config(
                "stride",
                format!(
                    "must lie in [1, iters - burn-in = {}], got {}",
                    self.iters - self.burn_in,
                    self.stride
                ),
            ));
        }
        if self.grid < 2 {
            return Err(CliError::config(
                "grid",
                format!("must be at least 2, got {}", self.grid),
            ));
        }
        if self.mc_samples < sgld_core::reference::MIN_GRID_MC_SAMPLES {
            return Err(CliError::config(
                "mc-samples",
                format!(
                    "must be at least {}, got {}",
                    sgld_core::reference::MIN_GRID_MC_SAMPLES,
                    self.mc_samples
                ),
            ));
        }
        if self.readout_samples == 0 {
            return Err(CliError::config("readout-samples", "must be at least 1"));
        }
        if self.theta0.iter().any(|t| !t.is_finite()) {
            return Err(CliError::config("theta0", "must be finite"));
        }
        let mut streams = Vec::with_capacity(self.dist.len());
        for d in &self.dist {
            let s: StreamSpec = d.parse().map_err(|e| CliError::config("dist", format!("{e}")))?;
            s.marginal()
                .validate()
                .map_err(|e| CliError::config("dist", format!("{d}: {e}")))?;
            streams.push(s);
        }
        let kind = if self.command == Command::Rate {
            self.objective_kind()
        } else {
            command_objective(self.command)
        };
        let dim = match kind {
            ObjectiveKind::Portfolio => {
                if streams.len() != 2 {
                    return Err(CliError::config(
                        "dist",
                        format!(
                            "{} needs exactly two distributions, got {}",
                            self.command,
                            streams.len()
                        ),
                    ));
                }
                if streams.iter().any(|s| !matches!(s, StreamSpec::Iid { .. })) {
                    return Err(CliError::config("dist", "portfolio assets must be i.i.d. laws"));
                }
                3
            }
            _ => {
                if streams.len() != 1 {
                    return Err(CliError::config(
                        "dist",
                        format!("{} needs exactly one distribution, got {}", self.command, streams.len()),
                    ));
                }
                1
            }
        };
        if self.command != Command::OracleGrid && !self.theta0.is_empty() && self.theta0.len() != dim {
            return Err(CliError::config(
                "theta0",
                format!("needs {dim} coordinates, got {}", self.theta0.len()),
            ));
        }
        if self.command == Command::Rate {
            if self.lambdas.len() < 2 {
                return Err(CliError::config(
                    "lambdas",
                    "a rate experiment needs at least two step sizes",
                ));
            }
            for (i, &l) in self.lambdas.iter().enumerate() {
                positive("lambdas", l)?;
                if self.lambdas[..i].contains(&l) {
                    return Err(CliError::config("lambdas", format!("step size {l} repeats")));
                }
            }
            if let Some(h) = self.horizon {
                positive("horizon", h)?;
            }
            if self.chains < 2 {
                return Err(CliError::config(
                    "chains",
                    "a rate experiment needs at least two chains",
                ));
            }
        }
        Ok(())
    }
}

fn command_objective(command: Command) -> ObjectiveKind {
    match command {
        Command::Quantile => ObjectiveKind::Quantile,
        Command::VarCvar => ObjectiveKind::VarCvar,
        _ => ObjectiveKind::Portfolio,
    }
}

fn parse_objective(name: &str) -> Result<ObjectiveKind, CliError> {
    ObjectiveKind::from_str(name).map_err(|e| CliError::config("objective", e.to_string()))
}
