//! The five experiments. Each returns a report holding the resolved config,
//! a summary and a table of rows; writing is left to [`crate::output`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sgld_core::distributions::{
    normal_pdf, normal_quantile, reference_cvar, reference_var, DataMatrix, DistributionSpec, IidVectorFactory,
    ScalarStreamFactory,
};
use sgld_core::metrics::{rate_experiment, RateExperiment, Reference, Schedule};
use sgld_core::objectives::{
    ObjectiveKind, PortfolioObjective, PortfolioParameter, QuantileObjective, VarCvarObjective,
};
use sgld_core::reference::{grid_search_cvar, GridSearchResult};
use sgld_core::rng::{chain_seed, readout_rng};
use sgld_core::sgld::{run_seeded_chain, sample_pi_beta, GradientOracle, ParameterPoint, SgldConfig, StreamFactory};

use crate::config::{Command, ExperimentConfig, ReferenceKind};
use crate::error::CliError;

/// Mean and sample standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Summary { mean, sd, n }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report<S, R> {
    pub schema: String,
    pub config: ExperimentConfig,
    pub summary: S,
    pub rows: Vec<R>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuantileSummary {
    /// Terminal iterate of chain 0.
    pub terminal: f64,
    pub terminals: Summary,
    /// Quantile of the stationary data law.
    pub reference_theta: f64,
    /// Standard deviation of chain 0's recorded post-burn-in trace.
    pub trace_sd: f64,
    pub chain0_seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: u64,
    pub theta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarCvarSummary {
    pub var: Summary,
    pub cvar: Summary,
    pub reference_var: f64,
    pub reference_cvar: f64,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarCvarRow {
    pub chain: usize,
    pub seed: u64,
    pub var: f64,
    pub cvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PortfolioSummary {
    pub weight1: Summary,
    pub weight2: Summary,
    pub var: Summary,
    pub cvar: Summary,
    pub reference: GridSummary,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PortfolioRow {
    pub chain: usize,
    pub seed: u64,
    pub theta: f64,
    pub w1: f64,
    pub w2: f64,
    pub g1: f64,
    pub g2: f64,
    pub cvar: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub w_star: f64,
    pub var_star: f64,
    pub cvar_star: f64,
    pub cvar_std_err: f64,
    pub seed: u64,
    pub mc_samples: usize,
}

impl From<&GridSearchResult> for GridSummary {
    fn from(r: &GridSearchResult) -> Self {
        GridSummary {
            w_star: r.w_star,
            var_star: r.var_star,
            cvar_star: r.cvar_star,
            cvar_std_err: r.cvar_std_err,
            seed: r.seed,
            mc_samples: r.mc_samples,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub weight: f64,
    pub cvar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    pub objective: String,
    /// Parameter coordinate compared (1 is w₁ for the portfolio).
    pub coordinate: usize,
    pub slope: f64,
    pub intercept: f64,
    pub reference: Reference,
    pub theta0: Vec<f64>,
    pub iterations: Vec<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub lambda: f64,
    pub w1_distance: f64,
    pub n_chains: usize,
    pub seed: u64,
    pub log_lambda: f64,
    pub log_w1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AnyReport {
    Quantile(Report<QuantileSummary, TraceRow>),
    VarCvar(Report<VarCvarSummary, VarCvarRow>),
    Portfolio(Report<PortfolioSummary, PortfolioRow>),
    Rate(Report<RateSummary, RateRow>),
    OracleGrid(Report<GridSummary, GridRow>),
}

pub fn run(cfg: &ExperimentConfig) -> Result<AnyReport, CliError> {
    Ok(match cfg.command {
        Command::Quantile => AnyReport::Quantile(cmd_quantile(cfg)?),
        Command::VarCvar => AnyReport::VarCvar(cmd_var_cvar(cfg)?),
        Command::Portfolio => AnyReport::Portfolio(cmd_portfolio(cfg)?),
        Command::Rate => AnyReport::Rate(cmd_rate(cfg)?),
        Command::OracleGrid => AnyReport::OracleGrid(cmd_oracle_grid(cfg)?),
    })
}

fn sgld_config(cfg: &ExperimentConfig, theta0: Vec<f64>) -> Result<SgldConfig, CliError> {
    Ok(
        SgldConfig::new(cfg.lambda, cfg.beta, cfg.iters, ParameterPoint::new(theta0))?
            .with_burn_in(cfg.burn_in)?
            .with_seed(cfg.seed),
    )
}

fn log_warnings(laws: &[DistributionSpec]) -> Vec<String> {
    let warnings: Vec<String> = laws.iter().flat_map(|l| l.assumption_warnings()).collect();
    for w in &warnings {
        log::warn!("{w}");
    }
    warnings
}

fn schema(command: Command) -> String {
    format!("sgld.{}.v1", command.name())
}

/// Quantile estimation along one traced chain, plus terminal statistics
/// when more chains are requested.
pub fn cmd_quantile(cfg: &ExperimentConfig) -> Result<Report<QuantileSummary, TraceRow>, CliError> {
    let stream = cfg.streams().remove(0);
    let law = stream.marginal();
    log_warnings(&[law]);
    let oracle = QuantileObjective::new(cfg.qbar, cfg.gamma)?;
    let factory = ScalarStreamFactory::new(stream);
    let config = sgld_config(cfg, cfg.theta0.clone())?;

    let chain0 = config.clone().with_seed(chain_seed(cfg.seed, 0));
    let trace = run_seeded_chain(&chain0, &oracle, &factory, cfg.stride)?;
    let terminals = if cfg.chains > 1 {
        sample_pi_beta(&config, &oracle, &factory, cfg.chains)?.coordinate(0)
    } else {
        vec![trace.terminal[0]]
    };
    let path = trace.coordinate(0);
    let reference_theta = reference_var(&law, cfg.qbar)?;
    log::info!("reference quantile of the stationary law: {reference_theta:.4}");
    Ok(Report {
        schema: schema(cfg.command),
        config: cfg.clone(),
        summary: QuantileSummary {
            terminal: trace.terminal[0],
            terminals: Summary::of(&terminals),
            reference_theta,
            trace_sd: Summary::of(&path).sd,
            chain0_seed: chain0.seed,
        },
        rows: trace
            .steps
            .iter()
            .zip(&path)
            .map(|(&step, &theta)| TraceRow { step, theta })
            .collect(),
    })
}

/// Plug-in CVaR at each chain's terminal point, on a fresh batch from that
/// chain's read-out stream.
fn read_out<T, F>(terminals: &[T], cfg: &ExperimentConfig, value: F) -> Result<Vec<f64>, CliError>
where
    T: Sync,
    F: Fn(&T, &mut sgld_core::rng::ChainRng) -> sgld_core::Result<f64> + Sync,
{
    Ok(terminals
        .par_iter()
        .enumerate()
        .map(|(c, t)| value(t, &mut readout_rng(chain_seed(cfg.seed, c as u64))))
        .collect::<sgld_core::Result<Vec<f64>>>()?)
}

pub fn cmd_var_cvar(cfg: &ExperimentConfig) -> Result<Report<VarCvarSummary, VarCvarRow>, CliError> {
    let stream = cfg.streams().remove(0);
    let law = stream.marginal();
    let warnings = log_warnings(&[law]);
    let oracle = VarCvarObjective::new(cfg.qbar, cfg.gamma)?;
    let factory = ScalarStreamFactory::new(stream);
    let config = sgld_config(cfg, cfg.theta0.clone())?;

    let vars = sample_pi_beta(&config, &oracle, &factory, cfg.chains)?.coordinate(0);
    let cvars = read_out(&vars, cfg, |&theta, rng| {
        let batch: Vec<f64> = (0..cfg.readout_samples).map(|_| law.sample(rng)).collect();
        oracle.value_mc(theta, &batch)
    })?;
    Ok(Report {
        schema: schema(cfg.command),
        config: cfg.clone(),
        summary: VarCvarSummary {
            var: Summary::of(&vars),
            cvar: Summary::of(&cvars),
            reference_var: reference_var(&law, cfg.qbar)?,
            reference_cvar: reference_cvar(&law, cfg.qbar)?,
            warnings,
        },
        rows: vars
            .iter()
            .zip(&cvars)
            .enumerate()
            .map(|(chain, (&var, &cvar))| VarCvarRow {
                chain,
                seed: chain_seed(cfg.seed, chain as u64),
                var,
                cvar,
            })
            .collect(),
    })
}

pub fn cmd_portfolio(cfg: &ExperimentConfig) -> Result<Report<PortfolioSummary, PortfolioRow>, CliError> {
    let laws = cfg.laws();
    let warnings = log_warnings(&laws);
    let oracle = PortfolioObjective::new(cfg.qbar, cfg.gamma, 2)?;
    let factory = IidVectorFactory::new(laws.clone())?;
    let config = sgld_config(cfg, cfg.theta0.clone())?;

    let set = sample_pi_beta(&config, &oracle, &factory, cfg.chains)?;
    let params: Vec<PortfolioParameter> = set
        .points
        .iter()
        .map(PortfolioParameter::from_point)
        .collect::<sgld_core::Result<_>>()?;
    let cvars = read_out(&params, cfg, |p, rng| {
        let batch = DataMatrix::sample(&laws, cfg.readout_samples, rng);
        oracle.value_mc(p, &batch)
    })?;
    let grid = grid_search_cvar(&laws[0], &laws[1], cfg.qbar, cfg.grid, cfg.mc_samples, cfg.seed)?;

    let rows: Vec<PortfolioRow> = params
        .iter()
        .zip(&cvars)
        .enumerate()
        .map(|(chain, (p, &cvar))| {
            let g = p.weights();
            PortfolioRow {
                chain,
                seed: chain_seed(cfg.seed, chain as u64),
                theta: p.theta,
                w1: p.w[0],
                w2: p.w[1],
                g1: g[0],
                g2: g[1],
                cvar,
            }
        })
        .collect();
    let col = |f: fn(&PortfolioRow) -> f64| rows.iter().map(f).collect::<Vec<_>>();
    Ok(Report {
        schema: schema(cfg.command),
        config: cfg.clone(),
        summary: PortfolioSummary {
            weight1: Summary::of(&col(|r| r.g1)),
            weight2: Summary::of(&col(|r| r.g2)),
            var: Summary::of(&col(|r| r.theta)),
            cvar: Summary::of(&cvars),
            reference: GridSummary::from(&grid),
            warnings,
        },
        rows,
    })
}

pub fn cmd_oracle_grid(cfg: &ExperimentConfig) -> Result<Report<GridSummary, GridRow>, CliError> {
    let laws = cfg.laws();
    log_warnings(&laws);
    let grid = grid_search_cvar(&laws[0], &laws[1], cfg.qbar, cfg.grid, cfg.mc_samples, cfg.seed)?;
    Ok(Report {
        schema: schema(cfg.command),
        config: cfg.clone(),
        summary: GridSummary::from(&grid),
        rows: grid
            .curve
            .iter()
            .map(|c| GridRow {
                weight: c.weight,
                cvar: c.cvar,
            })
            .collect(),
    })
}

/// Minimizer and curvature-based spread of a one-dimensional objective.
fn laplace_1d(star: f64, curvature: f64, beta: f64) -> Reference {
    Reference::Gaussian {
        mean: star,
        sd: 1.0 / (beta * curvature).sqrt(),
    }
}

/// Exact CVaR-minimizing weight of asset 1 for two independent normal
/// assets, by golden-section search (the CVaR is convex in the weight).
pub fn normal_portfolio_optimum(a: (f64, f64), b: (f64, f64), q_bar: f64) -> (f64, f64) {
    let z = normal_quantile(q_bar);
    let tail = normal_pdf(z) / (1.0 - q_bar);
    let moments = |g: f64| {
        let m = g * a.0 + (1.0 - g) * b.0;
        let s = (g * g * a.1 * a.1 + (1.0 - g) * (1.0 - g) * b.1 * b.1).sqrt();
        (m, s)
    };
    let cvar = |g: f64| {
        let (m, s) = moments(g);
        m + s * tail
    };
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-12 {
        let x1 = hi - ratio * (hi - lo);
        let x2 = lo + ratio * (hi - lo);
        if cvar(x1) <= cvar(x2) {
            hi = x2;
        } else {
            lo = x1;
        }
    }
    let g = 0.5 * (lo + hi);
    let (m, s) = moments(g);
    (g, m + s * z)
}

pub fn cmd_rate(cfg: &ExperimentConfig) -> Result<Report<RateSummary, RateRow>, CliError> {
    let kind = cfg.objective_kind();
    let streams = cfg.streams();
    let laws = cfg.laws();
    log_warnings(&laws);

    match kind {
        ObjectiveKind::Quantile => {
            let oracle = QuantileObjective::new(cfg.qbar, cfg.gamma)?;
            let star = oracle.minimizer(&laws[0]);
            let analytic = laplace_1d(star, oracle.curvature(&laws[0], star), cfg.beta);
            let factory = ScalarStreamFactory::new(streams[0]);
            run_rate(cfg, &oracle, &factory, vec![star], 0, Some(analytic))
        }
        ObjectiveKind::VarCvar => {
            let oracle = VarCvarObjective::new(cfg.qbar, cfg.gamma)?;
            let star = oracle.minimizer(&laws[0]);
            let analytic = laplace_1d(star, oracle.curvature(&laws[0], star), cfg.beta);
            let factory = ScalarStreamFactory::new(streams[0]);
            run_rate(cfg, &oracle, &factory, vec![star], 0, Some(analytic))
        }
        ObjectiveKind::Portfolio => {
            let oracle = PortfolioObjective::new(cfg.qbar, cfg.gamma, 2)?;
            let factory = IidVectorFactory::new(laws.clone())?;
            let normal = |l: &DistributionSpec| match *l {
                DistributionSpec::Normal { mu, sigma } => Some((mu, sigma)),
                _ => None,
            };
            let analytic = match (normal(&laws[0]), normal(&laws[1])) {
                (Some(a), Some(b)) => Some(normal_portfolio_optimum(a, b, cfg.qbar)),
                _ => None,
            };
            let (warm, reference) = match analytic {
                Some((g, var)) if g > 0.0 && g < 1.0 => {
                    let logit = (g / (1.0 - g)).ln();
                    let warm = vec![var, logit / 2.0, -logit / 2.0];
                    // The weight gradient is orthogonal to w₁ + w₂, which
                    // therefore stays at its initial value.
                    let sum = if cfg.theta0.is_empty() {
                        0.0
                    } else {
                        cfg.theta0[1] + cfg.theta0[2]
                    };
                    (
                        warm,
                        Some(Reference::Gaussian {
                            mean: (sum + logit) / 2.0,
                            sd: 0.0,
                        }),
                    )
                }
                _ => (vec![0.0; 3], None),
            };
            run_rate(cfg, &oracle, &factory, warm, 1, reference)
        }
    }
}

fn run_rate<O, F>(
    cfg: &ExperimentConfig,
    oracle: &O,
    factory: &F,
    warm_start: Vec<f64>,
    coordinate: usize,
    analytic: Option<Reference>,
) -> Result<Report<RateSummary, RateRow>, CliError>
where
    O: GradientOracle,
    F: StreamFactory,
{
    let theta0 = if cfg.theta0.is_empty() {
        warm_start
    } else {
        cfg.theta0.clone()
    };
    let schedule = match cfg.horizon {
        Some(t) => Schedule::Horizon(t),
        None => Schedule::Iterations(cfg.iters),
    };
    let experiment = RateExperiment {
        base: SgldConfig::new(cfg.lambdas[0], cfg.beta, 1, ParameterPoint::new(theta0.clone()))?.with_seed(cfg.seed),
        lambdas: cfg.lambdas.clone(),
        schedule,
        n_chains: cfg.chains,
        coordinate,
    };
    let reference = match cfg.reference {
        ReferenceKind::Analytic => analytic.ok_or_else(|| {
            CliError::config(
                "reference",
                "the analytic portfolio reference needs two normal assets with an interior optimum; use --reference sgld",
            )
        })?,
        ReferenceKind::Sgld => Reference::Sgld {
            lambda: cfg.reference_lambda,
            seed: cfg.reference_seed,
        },
    };
    let report = rate_experiment(&experiment, oracle, factory, &reference)?;
    Ok(Report {
        schema: schema(cfg.command),
        config: cfg.clone(),
        summary: RateSummary {
            objective: cfg.objective.clone(),
            coordinate,
            slope: report.fit.slope,
            intercept: report.fit.intercept,
            reference,
            theta0,
            iterations: cfg.lambdas.iter().map(|&l| schedule.iterations(l)).collect(),
        },
        rows: report
            .points
            .iter()
            .map(|p| RateRow {
                lambda: p.lambda,
                w1_distance: p.w_distance,
                n_chains: p.n_chains,
                seed: p.seed,
                log_lambda: p.lambda.ln(),
                log_w1: p.w_distance.ln(),
            })
            .collect(),
    })
}
